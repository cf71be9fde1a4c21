struct str { char *data; int n_data; };

int strcmp_index(char *a, char *b) {
    int i = 0;
    while (a[i] != 0 && a[i] == b[i])
        i++;
    return a[i] - b[i];
}

int strcmp_pointer(char *a, char *b) {
    while (*a != 0 && *a == *b) {
        a++;
        b++;
    }
    return *a - *b;
}

int sign(int x) {
    if (x > 0)
        return 1;
    if (x < 0)
        return -1;
    return 0;
}

void test(struct str s, struct str t) {
    if (s.n_data < 1 || s.data[s.n_data - 1] != 0)
        __VERIFIER_ignore();
    if (t.n_data < 1 || t.data[t.n_data - 1] != 0)
        __VERIFIER_ignore();
    if (sign(strcmp_index(s.data, t.data)) != sign(strcmp_pointer(s.data, t.data)))
        __VERIFIER_fail();
}
