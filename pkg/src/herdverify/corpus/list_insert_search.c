struct node { int v; struct node *next; };

void test(struct node *l, int x) {
    struct node *e = malloc(sizeof(struct node));
    e->v = x;
    e->next = NULL;
    if (l == NULL) {
        l = e;
    } else {
        struct node *p = l;
        while (p->next != NULL)
            p = p->next;
        p->next = e;
    }
    struct node *q = l;
    while (q != NULL && q->v != x)
        q = q->next;
    if (q == NULL)
        __VERIFIER_fail();
}
