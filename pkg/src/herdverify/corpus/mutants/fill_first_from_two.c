struct arr { int *data; int n_data; };

void test(struct arr a) {
    if (a.n_data < 1)
        __VERIFIER_ignore();
    int first = a.data[0];
    for (int i = 2; i < a.n_data; i++)
        a.data[i] = first;
    for (int i = 1; i < a.n_data; i++)
        if (a.data[i] != first)
            __VERIFIER_fail();
}
