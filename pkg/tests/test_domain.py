import random

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from herdverify import domain as D
from herdverify.concrete import enumerate_inputs, exec_step
from herdverify.engine import EngineConfig, verify
from herdverify.solver import ZERO, Inconsistent

from conftest import CORPUS_DIR, drive, load, program

NODE = "struct node { int v; struct node *next; };"


def motivating_program(**cfg):
    return D.Program(load(CORPUS_DIR / "motivating.c"), D.DomainConfig(**cfg))


def var(h, name, ti=0):
    return h.traces[ti].env[("v", name)]


def prefer(pc):
    """Split chooser that keeps the child whose next step lands on pc."""
    def choose(cs):
        for c in cs:
            nxt = D.step_primary(c)
            if nxt is not None and nxt.primary.pc == pc:
                return c
        return cs[0]
    return choose


# ---------------------------------------------------------------- initial herd


def test_initial_herd_of_array_harness():
    h = D.initial_herd(motivating_program())
    assert h.arity == 1
    assert h.primary.pc == h.prog.ir.entry
    assert h.solver.lower(var(h, "arr.n_data")) == 0
    assert h.prog.ir.instrs[h.primary.pc].line == 3


def test_initial_list_has_prefix_and_summary():
    p = program(NODE + "void test(struct node *l) { while (l != NULL) l = l->next; }", prefix=2)
    concrete = [m for m in p.majors.values() if m.prefix > 0]
    summary = [m for m in p.majors.values() if m.prefix == 0]
    assert len(concrete) == 2 and len(summary) == 1


def test_scalar_harness_has_no_heap():
    p = program("void test(int x) { if (x == 1) __VERIFIER_fail(); }")
    assert p.majors == {}


# ---------------------------------------------------------------- can_fail / step / split


def test_can_fail_follows_the_fail_pc():
    p = program("void test(int x) { if (x == 0) __VERIFIER_fail(); }")
    zero, other = D.split(D.initial_herd(p))
    assert D.can_fail(D.step_primary(zero))
    assert not D.can_fail(D.step_primary(other))


def test_first_iteration_of_second_loop_cannot_fail():
    # primary knows arr.data[0] = 0 at the test, so the failing side is infeasible
    p = motivating_program()
    h = drive(D.initial_herd(p), 3, choose=prefer(3))
    h = drive(D.step_primary(h), 9, choose=prefer(9))
    h = drive(drive(h, 13, choose=prefer(13)), 16)
    kids = D.split(h)
    assert len(kids) == 1
    assert not D.can_fail(D.step_primary(kids[0]))


def test_halt_has_no_successor():
    p = program("void test(int x) { }")
    h = drive(D.initial_herd(p), len(p.ir.instrs) - 1)
    assert D.step_primary(h) is None
    assert not D.can_fail(h)


def test_copy_keeps_order_facts():
    p = program("void test(int j, int k) { if (j <= k) __VERIFIER_ignore(); int i = j; if (i <= k) __VERIFIER_fail(); }")
    h = drive(D.initial_herd(p), 3, choose=lambda cs: cs[-1])
    h = D.step_primary(D.split(h)[0])
    assert h.solver.entails_le(var(h, "k"), var(h, "i"), -1)


def test_summary_store_marks_loop():
    p = motivating_program(prefix=1)
    h = D.initial_herd(p)
    touched = False
    for _ in range(60):
        kids = D.split(h)
        h = max(kids, key=lambda c: c.solver.lower(var(c, "arr.n_data")) or 0)
        h = D.step_primary(h)
        if h.touched:
            touched = True
            break
    assert touched


def test_split_on_equality_gives_both_outcomes():
    p = program("void test(int x) { if (x == 0) __VERIFIER_fail(); }")
    kids = D.split(D.initial_herd(p))
    assert len(kids) == 2
    eq, ne = kids
    x0, x1 = var(eq, "x"), var(ne, "x")
    assert eq.solver.value(x0) == 0
    assert ne.solver.entails_ne(x1, ZERO)
    assert [D.step_primary(k).primary.pc for k in kids] == [1, 2]


def test_split_on_decided_branch_keeps_one_child():
    p = program("void test(int x) { if (x < 0 || x > 3) __VERIFIER_ignore(); if (x >= 10) __VERIFIER_fail(); }")
    h = drive(D.initial_herd(p), 1, choose=prefer(1))
    h = drive(h, 3, choose=prefer(3))
    assert p.ir.instrs[3].opcode == "branch"
    (only,) = D.split(h)
    assert not D.can_fail(D.step_primary(only))


def test_split_on_pointer_with_two_majors():
    p = program(NODE + "void test(struct node *a, struct node *b, int c) {"
                " if (a == NULL || b == NULL) __VERIFIER_ignore();"
                " struct node *q = a; if (c) q = b; q->v = 1; }")
    h = drive(D.initial_herd(p), 6, choose=lambda cs: cs[-1])
    s = h.solver
    ma, mb = s.value(var_ptr(h, "a")), s.value(var_ptr(h, "b"))
    t = s.fresh("n")
    s.restrict(t, {ma, mb})
    h.primary.env[("v", "q", "M")] = t
    h.primary.env[("v", "q", "m")] = s.const(0)
    h.invalidate()
    kids = D.split(h)
    assert sorted(k.solver.value(k.primary.env[("v", "q", "M")]) for k in kids) == sorted([ma, mb])


def var_ptr(h, name):
    return h.primary.env[("v", name, "M")]


# ---------------------------------------------------------------- scapegoats


def after_first_iteration():
    p = motivating_program()
    h = drive(D.initial_herd(p), 3, choose=prefer(3))
    return drive(D.step_primary(h), 2)


def test_array_scapegoat_shifts_input():
    h = after_first_iteration()
    g = D.maybe_add_scapegoats(h, 1)
    assert g.arity == 2
    s = g.solver
    pr, sg = g.traces
    n_pr, n_sg = pr.env[("v", "arr.n_data")], sg.env[("v", "arr.n_data")]
    assert s.entails_le(n_sg, n_pr, -1) and s.entails_le(n_pr, n_sg, 1)
    # same region, one element further along
    assert s.entails_eq(sg.env[("v", "arr.data", "M")], pr.env[("v", "arr.data", "M")])
    assert s.value(sg.env[("v", "arr.data", "m")]) == 1
    assert s.entails_le(sg.env[("size",)], pr.env[("size",)], -1)


def test_no_scapegoat_before_size_is_known():
    h = D.initial_herd(motivating_program())
    assert D.maybe_add_scapegoats(h, 1).arity == 1


def test_list_gets_one_scapegoat_per_skippable_node():
    p = program(NODE + "void test(struct node *l) { int n = 0; while (l != NULL) { n++; l = l->next; }"
                " if (n < 0) __VERIFIER_fail(); }", size_bound=2)
    h = D.initial_herd(p)
    iteration = p.ir.loops[0].iteration
    seen = 0
    for _ in range(40):
        kids = D.split(h)
        h = next((c for c in kids if (c.solver.lower(var_ptr(c, "l")) or 0) >= 1), kids[0])
        h = D.step_primary(h)
        if h.last_instr == iteration:
            seen += 1
            if seen == 2:
                break
    g = D.maybe_add_scapegoats(h, 2)
    assert g.arity == 3


def test_step_scapegoat_out_of_range_is_identity():
    h = after_first_iteration()
    assert D.step_scapegoat(h, 5) is h
    assert D.step_scapegoat(h, 1) is h


def test_scapegoat_steps_or_drops():
    g = D.maybe_add_scapegoats(after_first_iteration(), 1)
    before = g.traces[1].pc
    out = D.step_scapegoat(g, 2)
    assert out.arity == 1 or out.traces[1].pc != before


def test_blame_needs_strictly_smaller_scapegoat():
    p = program("void test(int x) { if (x == 0) __VERIFIER_fail(); }")
    h = D.step_primary(D.split(D.initial_herd(p))[0])
    h.traces.append(h.primary.copy())
    h.traces[1].origin = "copy"
    h.invalidate()
    assert D.can_fail(h)
    assert not D.can_blame(h, 2)


def test_blame_needs_scapegoat_at_failure():
    g = D.maybe_add_scapegoats(after_first_iteration(), 1)
    assert not D.can_blame(g, 2)


def test_fail_herd_of_worked_example_is_blamed(monkeypatch):
    blamed = []
    real = D.can_blame

    def spy(h, i):
        ok = real(h, i)
        if ok:
            blamed.append(h)
        return ok

    monkeypatch.setattr(D, "can_blame", spy)
    v = verify(load(CORPUS_DIR / "motivating.c"), None, EngineConfig())
    assert v.safe
    assert blamed and all(h.prog.ir.instrs[h.primary.pc].line == 7 for h in blamed)


# ---------------------------------------------------------------- widening and precision


def gap_herd(base, c):
    a = base.clone()
    a.solver.assert_le(var(a, "x"), var(a, "y"), c)
    a.invalidate()
    return a


@pytest.fixture
def xy_herd():
    return D.initial_herd(program("void test(int x, int y) { while (x < y) x++; }"))


def test_unshared_bound_weakens_to_sign(xy_herd):
    w = D.widen(gap_herd(xy_herd, -5), [gap_herd(xy_herd, -8)])
    assert w.solver.le(var(w, "x"), var(w, "y")) == -1


def test_shared_bound_is_kept(xy_herd):
    w = D.widen(gap_herd(xy_herd, -5), [gap_herd(xy_herd, -5)])
    assert w.solver.le(var(w, "x"), var(w, "y")) == -5


def test_unmatched_bound_is_dropped(xy_herd):
    w = D.widen(gap_herd(xy_herd, -5), [xy_herd])
    assert not w.solver.entails_le(var(w, "x"), var(w, "y"), 0)


def test_more_precise_basics(xy_herd):
    a = gap_herd(xy_herd, -5)
    assert D.more_precise(a, a)
    assert D.more_precise(a, xy_herd)
    assert not D.more_precise(xy_herd, a)


def test_more_precise_needs_same_path(xy_herd):
    moved = D.step_primary(D.split(xy_herd)[0])
    assert not D.more_precise(moved, xy_herd)
    assert not D.more_precise(xy_herd, moved)


POOL_PROGRAMS = [("motivating", 1), ("strlen", 1), ("list_count", 1), ("bst_search", 1), ("fill_first", 2),
                 ("list_insert_search", 1), ("overlap_copy", 2)]
_POOL = []


def herd_pool():
    if not _POOL:
        for name, k in POOL_PROGRAMS:
            v = verify(load(CORPUS_DIR / f"{name}.c"), None, EngineConfig(keep_seen=True, size_bound=k))
            _POOL.extend(v.seen)
    return _POOL


def perturb(h, rng):
    """Copy of h with up to two extra random difference facts."""
    h = h.clone()
    ints = [t for tr in h.traces for t in tr.env.values() if h.solver.kind.get(t) == "n"]
    for _ in range(rng.randint(0, 2)):
        a, b = rng.choice(ints), rng.choice(ints)
        s = h.solver.clone()
        try:
            s.assert_le(a, b, rng.randint(-3, 3))
        except Inconsistent:
            continue
        h.solver = s
    h.invalidate()
    return h


def check_widening(index: int, seed: int) -> bool:
    pool = herd_pool()
    rng = random.Random(seed)
    a = perturb(pool[index % len(pool)], rng)
    same = [x for x in pool if x.key() == a.key()]
    neighbors = [perturb(x, rng) for x in rng.sample(same, min(len(same), rng.randint(0, 3)))]
    return D.more_precise(a, D.widen(a, neighbors))


@settings(max_examples=1000, deadline=None, database=None, suppress_health_check=list(HealthCheck))
@given(st.integers(min_value=0, max_value=10**6), st.integers(min_value=0, max_value=2**32))
def test_widening_contract(index, seed):
    assert check_widening(index, seed)


def test_pool_is_large_enough():
    assert len(herd_pool()) >= 1000


# ---------------------------------------------------------------- oracle-level coverage of split and step


def concrete_value(name, st, first):
    if name[0] == "Z":
        return 0
    if name[0] == "+":
        v = concrete_value(name[1], st, first)
        return None if v is None else v + name[2]
    if name[0] != "S" or name[1] != 0:
        return None
    where = first if name[2] == "F" else st.locals
    slot = name[3:]
    if slot == ("size",):
        return 0
    if slot[0] == "v" and len(slot) == 2:
        return where.get(slot[1])
    return None


def satisfies(h, st, first) -> bool:
    """Does the concrete state (as the primary's last state) meet every fact we can evaluate?"""
    if h.primary.pc != st.pc:
        return False
    f = D.facts(h)
    for (n1, n2), c in f.le.items():
        a, b = concrete_value(n1, st, first), concrete_value(n2, st, first)
        if a is not None and b is not None and a - b > c:
            return False
    for n1, n2 in f.ne:
        a, b = concrete_value(n1, st, first), concrete_value(n2, st, first)
        if a is not None and b is not None and a == b:
            return False
    for nm, d in f.dom.items():
        a = concrete_value(nm, st, first)
        if a is not None and a not in d:
            return False
    return True


SCALAR_PROGRAMS = [
    "void test(int x, int y) { int z = x - y; if (z == 0) { if (x != y) __VERIFIER_fail(); } }",
    "void test(int x) { int n = 0; while (n < x) n++; if (x > 0 && n != x) __VERIFIER_fail(); }",
    "void test(int a, int b) { if (a < b) { int t = a; a = b; b = t; } if (a < b) __VERIFIER_fail(); }",
    "void test(void) { int x = nondet_int(); int y = x + 1; if (y <= x) __VERIFIER_fail(); }",
]


@pytest.mark.parametrize("src", SCALAR_PROGRAMS)
def test_split_and_step_cover_concrete_successors(src):
    p = program(src, scapegoats=False)
    ir = p.ir
    for st0, _, _ in enumerate_inputs(ir, ir.shape, 0):
        first = dict(st0.locals)
        h, st = D.initial_herd(p), st0
        assert satisfies(h, st, first)
        for _ in range(40):
            kids = [k for k in D.split(h) if satisfies(k, st, first)]
            assert kids, f"no split child covers pc {st.pc}"
            succs = exec_step(ir, st.copy(), (-1, 0, 1, 2))
            if not succs:
                break
            nxt = D.step_primary(kids[0])
            assert nxt is not None
            st = next((s for s in succs if satisfies(nxt, s, first)), None)
            assert st is not None, f"step from pc {kids[0].primary.pc} lost the concrete successor"
            h = nxt


def test_paths_stay_finite():
    for name in ("motivating", "strlen", "list_count"):
        v = verify(load(CORPUS_DIR / f"{name}.c"), None, EngineConfig(keep_seen=True))
        paths = {h.path for h in v.seen}
        assert len(paths) < 2000
        assert all(len(pth) < 200 for pth in paths)


def test_render_lists_each_trace():
    g = D.maybe_add_scapegoats(after_first_iteration(), 1)
    text = D.render_herd(g)
    assert "h[1] (primary)" in text and "h[2] (scapegoat" in text
