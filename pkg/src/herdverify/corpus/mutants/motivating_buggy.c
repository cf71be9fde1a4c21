struct arr { int *data; int n_data; };
void test(struct arr arr) {
    for (int i = 0; i < arr.n_data; i++)
        arr.data[i] = 1;
    for (int i = 0; i < arr.n_data; i++)
         if (arr.data[i] != 0)
             __VERIFIER_fail(); }
