struct tree { int key; struct tree *left; struct tree *right; };

void test(struct tree *t, int x) {
    struct tree *n = malloc(sizeof(struct tree));
    n->key = x;
    n->left = NULL;
    n->right = NULL;
    if (t == NULL) {
        t = n;
    } else {
        struct tree *p = t;
        int done = 0;
        while (!done) {
            if (x < p->key) {
                if (p->left == NULL) {
                    p->left = n;
                    done = 1;
                } else {
                    p = p->left;
                }
            } else {
                if (p->right == NULL) {
                    p->right = n;
                    done = 1;
                } else {
                    p = p->right;
                }
            }
        }
    }
    struct tree *q = t;
    while (q != NULL && q->key != x) {
        if (x < q->key)
            q = q->left;
        else
            q = q->right;
    }
    if (q == NULL)
        __VERIFIER_fail();
}
