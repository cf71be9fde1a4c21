struct tree { int key; struct tree *left; struct tree *right; };

void test(struct tree *t, int x) {
    if (t == NULL)
        __VERIFIER_ignore();
    struct tree *p = t;
    while (p != NULL && p->key != x) {
        if (x < p->key)
            p = p->right;
        else
            p = p->left;
    }
    if (p == NULL && t->key == x)
        __VERIFIER_fail();
    if (p != NULL && p->key != x)
        __VERIFIER_fail();
    if (t->key < x && t->right != NULL && t->right->key == x && p == NULL)
        __VERIFIER_fail();
}
