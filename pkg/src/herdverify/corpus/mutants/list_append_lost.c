#define CAP 1000000

struct node { int v; struct node *next; };

int length(struct node *l) {
    int n = 0;
    while (l != NULL) {
        n++;
        if (n > CAP)
            __VERIFIER_ignore();
        l = l->next;
    }
    return n;
}

void test(struct node *l, int x) {
    int before = length(l);
    struct node *e = malloc(sizeof(struct node));
    e->v = x;
    e->next = NULL;
    if (l == NULL) {
        l = e;
    } else {
        struct node *p = l;
        while (p->next != NULL)
            p = p->next;
        p->next = NULL;
    }
    if (length(l) != before + 1)
        __VERIFIER_fail();
}
