struct str { char *data; int n_data; };

int my_strlen(char *s) {
    int i = 0;
    while (s[i] != 0)
        i++;
    return i;
}

void test(struct str s) {
    if (s.n_data < 1)
        __VERIFIER_ignore();
    int n = my_strlen(s.data);
    if (n >= s.n_data)
        __VERIFIER_fail();
}
