#define CAP 1000000

struct node { int v; struct node *next; };

void test(struct node *l) {
    if (l == NULL)
        __VERIFIER_ignore();
    int n = 0;
    struct node *p = l;
    while (p != NULL) {
        n++;
        if (n > CAP)
            __VERIFIER_ignore();
        p = p->next;
    }
    struct node *last = l;
    while (last->next != NULL)
        last = last->next;
    last->next = l;
    int m = 1;
    struct node *q = l->next;
    while (q != l) {
        m++;
        q = q->next;
    }
    if (m != n)
        __VERIFIER_fail();
}
