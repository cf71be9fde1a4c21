#define CAP 1000000

struct node { int v; struct node *next; };

void test(struct node *l, int x) {
    int n = 0;
    int hits = 0;
    struct node *p = l;
    while (p != NULL) {
        n++;
        if (n > CAP)
            __VERIFIER_ignore();
        if (p->v == x)
            hits++;
        p = p->next;
    }
    if (hits > n)
        __VERIFIER_fail();
}
