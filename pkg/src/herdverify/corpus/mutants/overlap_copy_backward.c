struct arr { int *data; int n_data; };

void copy_ints(int *dst, int *src, int n) {
    for (int i = n - 1; i >= 0; i--)
        dst[i] = src[i];
}

void test(struct arr a) {
    if (a.n_data < 1)
        __VERIFIER_ignore();
    copy_ints(a.data + 1, a.data, a.n_data - 1);
    for (int i = 1; i < a.n_data; i++)
        if (a.data[i] != a.data[0])
            __VERIFIER_fail();
}
