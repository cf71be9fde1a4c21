union u { int i; char c; };

void test(int x) {
    union u v;
    v.i = x;
    if (v.c != x)
        __VERIFIER_fail();
}
