struct str { char *data; int n_data; };

int find_char(char *s, char c) {
    int i = 0;
    while (s[i] != 0) {
        if (s[i] == c)
            return i;
        i++;
    }
    return -1;
}

void test(struct str s, char c) {
    if (s.n_data < 1 || s.data[s.n_data - 1] != 0)
        __VERIFIER_ignore();
    int k = find_char(s.data, c);
    if (k >= 0 && s.data[k] != c)
        __VERIFIER_fail();
}
