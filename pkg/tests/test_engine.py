import time

import pytest

from herdverify import domain as D
from herdverify.concrete import BoundExhausted, FailingTraceWitness, SafeUpToBound, enumerate_reachable
from herdverify.engine import EngineConfig, NotSplittable, partition_worklist, verify, verify_with_retry
from herdverify.solver import Inconsistent

from conftest import CORPUS_DIR, MUTANT_DIR, corpus_entries, load, load_src, mutant_entries, run

MOTIVATING = CORPUS_DIR / "motivating.c"
HEADER_1, HEADER_2 = 2, 12


# ---------------------------------------------------------------- the worked example


def _bounds(h, name):
    t = h.primary.env.get(("v", name))
    return None if t is None else h.solver.bounds(t)


def classify(h, fail_pc):
    """Name the abstract state a herd stands for, or None away from the headers."""
    pc = h.primary.pc
    if pc == fail_pc:
        return "a9"
    if pc == HEADER_1:
        n, i = _bounds(h, "arr.n_data"), _bounds(h, "i")
        if n[1] == 0:
            return "a2"
        return {0: "a1", 1: "a3"}.get(i[0], "a6")
    if pc == HEADER_2:
        n, i = _bounds(h, "arr.n_data"), _bounds(h, "i.2")
        if n[1] == 0:
            return "a2"
        if n == (1, 1):
            return "a4" if i[0] == 0 else "a5"
        return "a7" if i == (0, 0) else "a8"
    return None


def golden_run():
    """(verdict, classes seen, classes of blamed herds, seconds) for the worked example."""
    ir = load(MOTIVATING)
    fail_pc = next(k for k, ins in enumerate(ir.instrs) if ins.opcode == "fail" and ins.line == 7)
    blamed = []
    real = D.can_blame

    def spy(h, i):
        ok = real(h, i)
        if ok:
            blamed.append(h)
        return ok

    D.can_blame = spy
    try:
        start = time.monotonic()
        v = verify(ir, None, EngineConfig(keep_seen=True, timeout=60))
        seconds = time.monotonic() - start
    finally:
        D.can_blame = real
    seen = {classify(h, fail_pc) for h in v.seen} - {None}
    fail_herds = [h for h in v.seen if h.primary.pc == fail_pc]
    all_blamed = all(any(h is b for b in blamed) for h in fail_herds)
    return v, seen, {classify(h, fail_pc) for h in blamed}, all_blamed, seconds


def test_worked_example_golden():
    v, seen, blamed, all_blamed, seconds = golden_run()
    assert v.safe
    assert seconds < 60
    assert seen == {f"a{k}" for k in range(1, 10)}
    assert blamed == {"a9"} and all_blamed


def test_worked_example_classic_is_unknown():
    assert not verify(load(MOTIVATING), None, EngineConfig(mode="classic")).safe


# ---------------------------------------------------------------- corpus and mutants


def corpus_results(mode="descent"):
    return {e.path.stem: (e, run(e.path, mode)) for e in corpus_entries()}


def test_corpus_thresholds():
    res = corpus_results()
    by_cat = {}
    for e, v in res.values():
        assert v.stats.seconds < 300, e.path.stem
        by_cat.setdefault(e.category, []).append(v.safe)
    strings_lists = by_cat["strings"] + by_cat["lists"]
    assert len(strings_lists) == 10 and sum(strings_lists) >= 8
    assert len(by_cat["trees"]) == 2 and sum(by_cat["trees"]) >= 1


MUTANTS = mutant_entries()


def test_enough_mutants():
    assert len(MUTANTS) >= 6


@pytest.mark.parametrize("entry", MUTANTS, ids=[e.path.stem for e in MUTANTS])
def test_mutant_is_unknown_and_really_fails(entry):
    v = run(entry.path)
    assert not v.safe
    assert isinstance(enumerate_reachable(load(entry.path), max_size=3), FailingTraceWitness)


# ---------------------------------------------------------------- classic mode


def test_classic_agrees_where_safe():
    for e, v in corpus_results("classic").values():
        if v.safe:
            assert run(e.path).safe, e.path.stem


UNBOUNDED = ["strlen", "strchr", "fill_first", "overlap_copy", "list_append_length"]


@pytest.mark.parametrize("name", UNBOUNDED)
def test_classic_cannot_prove_size_dependent_loops(name):
    assert not run(CORPUS_DIR / f"{name}.c", "classic").safe
    assert run(CORPUS_DIR / f"{name}.c").safe


SCALAR = [
    "void test(int x) { if (x < 0 || x > 5) __VERIFIER_ignore(); int n = 0; while (n < x) n++; if (n != x) __VERIFIER_fail(); }",
    "void test(int a, int b) { if (a < b) { int t = a; a = b; b = t; } if (a < b) __VERIFIER_fail(); }",
    "void test(int x) { if (x == 3) __VERIFIER_fail(); }",
]


@pytest.mark.parametrize("src", SCALAR)
def test_descent_without_scapegoats_is_classic(src, monkeypatch):
    ir = load_src(src)
    classic = verify(ir, None, EngineConfig(mode="classic"))
    monkeypatch.setattr(D, "maybe_add_scapegoats", lambda h, k=None: h)
    descent = verify(ir, None, EngineConfig())
    assert descent.safe == classic.safe
    assert descent.stats.herds == classic.stats.herds


# ---------------------------------------------------------------- blame strictness


def blame_strictness(paths):
    """Every successful blame: re-check size(primary) - size(scapegoat) >= 1 in a fresh solver.

    Returns (blames checked, failures).
    """
    checked, bad = 0, []
    real = D.can_blame

    def spy(h, i):
        ok = real(h, i)
        if ok:
            nonlocal checked
            checked += 1
            s = h.solver.clone()
            pr, sg = h.traces[0].env[("size",)], h.traces[i - 1].env[("size",)]
            try:
                s.assert_le(pr, sg, 0)  # size(pr) <= size(sg)
                bad.append(h)
            except Inconsistent:
                pass
        return ok

    D.can_blame = spy
    try:
        for path in paths:
            verify_with_retry(load(path), None, EngineConfig())
    finally:
        D.can_blame = real
    return checked, bad


def test_blame_is_strict():
    checked, bad = blame_strictness([e.path for e in corpus_entries() + MUTANTS])
    assert checked > 0
    assert not bad


# ---------------------------------------------------------------- determinism and parallelism


def verdict_table(workers):
    return {e.path.stem: run(e.path, "descent", workers).safe for e in corpus_entries() + MUTANTS}


def test_verdicts_independent_of_workers():
    one = verdict_table(1)
    assert verdict_table(2) == one
    assert verdict_table(4) == one


def test_repeat_runs_agree():
    ir = load(CORPUS_DIR / "list_count.c")
    a = verify(ir, None, EngineConfig())
    b = verify(ir, None, EngineConfig())
    assert (a.safe, a.stats.herds, a.stats.seen) == (b.safe, b.stats.herds, b.stats.seen)


def branch_herds():
    ir = load_src("void test(int x, int y) { if (x == 0) { if (y == 0) __VERIFIER_fail(); } }")
    h0 = D.initial_herd(D.Program(ir, D.DomainConfig()))
    return [D.step_primary(kid) for kid in D.split(h0)]


def test_partition_splits_diverged_paths():
    w = branch_herds()
    left, right = partition_worklist(w)
    assert left and right
    assert len(left) + len(right) == len(w)
    assert {h.path for h in left}.isdisjoint({h.path for h in right})


def test_partition_refuses_single_entry():
    with pytest.raises(NotSplittable):
        partition_worklist(branch_herds()[:1])


def test_partition_refuses_inside_loop():
    ir = load_src("void test(int x) { int n = 0; while (n < x) n++; }")
    prog = D.Program(ir, D.DomainConfig())
    h = D.initial_herd(prog)
    for _ in range(3):
        h = D.step_primary(D.split(h)[0])
    inside = [D.step_primary(c) for c in D.split(h)]
    inside = [x for x in inside if x is not None and x.counts]
    assert inside
    if len(inside) < 2:
        inside = inside + [x.clone() for x in inside]
    with pytest.raises(NotSplittable):
        partition_worklist(inside)


# ---------------------------------------------------------------- retries and budgets


@pytest.mark.parametrize("name", ["fill_first", "overlap_copy"])
def test_retry_succeeds_with_larger_bound(name):
    ir = load(CORPUS_DIR / f"{name}.c")
    assert not verify(ir, None, EngineConfig(size_bound=1)).safe
    v = verify_with_retry(ir, None, EngineConfig(size_bound=1, max_retries=1))
    assert v.safe and v.stats.attempts == 2


def test_all_retries_fail():
    v = verify_with_retry(load(MUTANT_DIR / "motivating_buggy.c"), None, EngineConfig(max_retries=2))
    assert not v.safe and v.stats.attempts == 3
    assert v.witness is not None


def test_classic_does_not_retry():
    v = verify_with_retry(load(MOTIVATING), None, EngineConfig(mode="classic", max_retries=3))
    assert v.stats.attempts == 1


def test_budget_exhaustion_is_unknown():
    v = verify(load(MOTIVATING), None, EngineConfig(max_iterations=5))
    assert not v.safe and v.reason == "budget exhausted"
    assert v.stats.timeout


def test_timeout_is_unknown():
    v = verify(load(CORPUS_DIR / "strcmp_equiv.c"), None, EngineConfig(timeout=0.01))
    assert not v.safe and v.label == "UNKNOWN"


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        EngineConfig(workers=0)
    with pytest.raises(ValueError):
        EngineConfig(mode="fast")


# ---------------------------------------------------------------- soundness against the oracle


def test_safe_verdicts_hold_on_small_inputs():
    for e, v in corpus_results().values():
        if v.safe:
            r = enumerate_reachable(load(e.path), max_size=4, max_steps=10_000)
            assert isinstance(r, (SafeUpToBound, BoundExhausted)), e.path.stem
            assert isinstance(r, SafeUpToBound), f"{e.path.stem}: step budget ran out"
