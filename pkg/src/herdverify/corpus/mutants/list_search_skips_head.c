struct node { int v; struct node *next; };

void test(struct node *l, int x) {
    struct node *e = malloc(sizeof(struct node));
    e->v = x;
    e->next = NULL;
    if (l == NULL) {
        l = e;
    } else {
        e->next = l;
        l = e;
    }
    struct node *q = l->next;
    while (q != NULL && q->v != x)
        q = q->next;
    if (q == NULL)
        __VERIFIER_fail();
}
