struct tree { int key; struct tree *left; struct tree *right; };

void test(struct tree *t, int x) {
    struct tree *p = t;
    while (p != NULL && p->key != x) {
        if (x < p->key)
            p = p->left;
        else
            p = p->right;
    }
    if (p != NULL && p->key != x)
        __VERIFIER_fail();
}
