import re

import pytest

from herdverify.concrete import (BoundExhausted, ConcreteState, ConcreteTrace, FailingTraceWitness, SafeUpToBound,
                                 concrete_step, enumerate_inputs, enumerate_reachable, trace_size)
from herdverify.frontend import load_program, parse_and_lower
from herdverify.ir import LinkedParam
from herdverify.passes import dataflow_optimize, instrument_checks

from conftest import CORPUS_DIR, corpus_entries, load, mutant_entries

NODE = "struct node { int v; struct node *next; };"


def initial_traces(ir, max_size=3):
    for st, size, desc in enumerate_inputs(ir, ir.shape, max_size):
        yield ConcreteTrace((ConcreteState.freeze(st),), ir), size, desc


def step_until(t, opcode):
    while t.ir.instrs[t.last.pc].opcode != opcode:
        (t,) = concrete_step(t)
    return t


# ---------------------------------------------------------------- concrete semantics


def test_nothing_follows_halt():
    ir, _ = load_program("void test(int x) { int y = x; }")
    t, _, _ = next(initial_traces(ir))
    t = step_until(t, "halt")
    assert concrete_step(t) == set()


def test_assign_is_deterministic():
    ir, _ = load_program("void test(int j) { int i = j; if (i == 5) __VERIFIER_fail(); }", optimize=False)
    (t,) = [t for t, _, d in initial_traces(ir) if d["params"]["j"] == 2]
    (t2,) = concrete_step(t)
    assert t2.last.local("i") == 2


def test_branch_on_nondet_covers_both_sides():
    ir, _ = load_program("void test(void) { int x = nondet_int(); if (x == 0) __VERIFIER_fail(); }")
    t, _, _ = next(initial_traces(ir))
    frontier = {t}
    targets = set()
    for _ in range(4):
        frontier = {u for s in frontier for u in concrete_step(s)}
        targets |= {ir.instrs[u.last.pc].opcode for u in frontier}
    assert {"fail", "halt"} <= targets


def test_motivating_safe_up_to_three(motivating_ir):
    assert isinstance(enumerate_reachable(motivating_ir, max_size=3), SafeUpToBound)


def test_motivating_mutant_fails_on_one_element():
    ir = load(CORPUS_DIR / "mutants" / "motivating_buggy.c")
    w = enumerate_reachable(ir, max_size=3)
    assert isinstance(w, FailingTraceWitness)
    assert w.inputs["params"]["arr"][2] == 1  # a single element
    assert ir.instrs[w.trace[-1].pc].opcode == "fail"


def test_empty_body_is_safe():
    ir, _ = load_program("void test(void) { }")
    assert isinstance(enumerate_reachable(ir), SafeUpToBound)


def test_step_budget_reported_separately():
    ir, _ = load_program("void test(int x) { while (x == x) x = x; }")
    assert isinstance(enumerate_reachable(ir, max_size=0, max_steps=50), BoundExhausted)


# ---------------------------------------------------------------- trace size


def test_size_of_nothing_is_zero():
    ir, _ = load_program("void test(int x) { }")
    t, _, _ = next(initial_traces(ir))
    assert trace_size(t) == 0


def test_size_of_three_node_list():
    ir, _ = load_program(NODE + "void test(struct node *l) { }")
    sizes = {trace_size(t) for t, size, d in initial_traces(ir) if d["params"]["l"] == ("linked", 3)}
    assert sizes == {3}


def test_size_of_four_element_array():
    ir, _ = load_program("struct arr { int *data; int n_data; }; void test(struct arr a) { }")
    sizes = {trace_size(t) for t, _, d in initial_traces(ir, 4) if d["params"]["a"][2] == 4}
    assert sizes == {5}


def test_malloc_counts_toward_size():
    ir, _ = load_program(NODE + "void test(int x) { struct node *e = malloc(sizeof(struct node)); e->v = x; }")
    t, _, _ = next(initial_traces(ir))
    t = step_until(t, "halt")
    assert trace_size(t) == 1


@pytest.mark.parametrize("src, param", [
    ("struct arr { int *data; int n_data; }; void test(struct arr a) { }", "a"),
    (NODE + "void test(struct node *a) { }", "a"),
])
def test_removing_an_element_shrinks_size(src, param):
    ir, _ = load_program(src)
    by_count = {}
    for t, _, d in initial_traces(ir, 3):
        desc = d["params"][param]
        count = desc[2] if desc[0] == "array" else desc[1]
        by_count.setdefault(count, set()).add(trace_size(t))
    for n in range(1, 4):
        assert max(by_count[n - 1]) < min(by_count[n])


# ---------------------------------------------------------------- instrumentation and the pre-pass


def _opcodes(ir):
    return [i.opcode for i in ir.instrs]


def test_store_through_pointer_is_checked():
    ir, _ = parse_and_lower(NODE + "void test(struct node *p) { p->v = 0; }")
    ir = instrument_checks(ir)
    ops = _opcodes(ir)
    k = ops.index("store")
    assert ops[k - 1] == "check" and ir.instrs[k - 1].kind == "ptr"


def test_array_access_is_checked():
    ir, _ = parse_and_lower("struct arr { int *data; int n_data; }; void test(struct arr a, int i) { int x = a.data[i]; }")
    ir = instrument_checks(ir)
    ops = _opcodes(ir)
    assert ops[ops.index("load") - 1] == "check"


def test_duplicate_access_is_instrumented_twice():
    ir, _ = parse_and_lower(NODE + "void test(struct node *p) { p->v = 0; p->v = 1; }")
    ir = instrument_checks(ir)
    assert sum(1 for i in ir.instrs if i.opcode == "check") == 2


def _shape(ir):
    return [re.sub(r"\d+", "#", i.render()) for i in ir.instrs]


def test_instrumentation_idempotent():
    ir, _ = parse_and_lower(NODE + "void test(struct node *p) { p->v = p->v + 1; }")
    once = instrument_checks(ir)
    assert _shape(instrument_checks(once)) == _shape(once)


def test_duplicate_check_removed():
    ir, _ = parse_and_lower(NODE + "void test(struct node *p) { p->v = 0; p->v = 1; }")
    ir = dataflow_optimize(instrument_checks(ir))
    assert sum(1 for i in ir.instrs if i.opcode == "check") == 1


def test_dead_store_removed():
    ir, _ = parse_and_lower("void test(int x) { int d = 5; if (x == 1) __VERIFIER_fail(); }")
    ir = dataflow_optimize(instrument_checks(ir))
    assert not any(i.dst == "d" for i in ir.instrs)


def test_check_in_loop_retained():
    src = "struct arr { int *data; int n_data; }; void test(struct arr a) { for (int i = 0; i <= a.n_data; i++) a.data[i] = 0; }"
    ir, _ = load_program(src)
    assert any(i.opcode == "check" for i in ir.instrs)
    assert isinstance(enumerate_reachable(ir, max_size=2), FailingTraceWitness)


ALL = [e.path for e in corpus_entries() + mutant_entries()]


@pytest.mark.parametrize("path", ALL, ids=[p.stem for p in ALL])
def test_prepass_preserves_bugs(path):
    src = path.read_text()
    plain, _ = load_program(src, optimize=False)
    opt, _ = load_program(src)
    a = enumerate_reachable(plain, max_size=3)
    b = enumerate_reachable(opt, max_size=3)
    assert type(a) is type(b)


def test_dump_format(motivating_ir):
    for line in motivating_ir.dump().splitlines():
        assert re.match(r"^\d+: \w+.*?( -> \d+(, \d+)*)?$", line)
    assert motivating_ir.dump().splitlines()[0].startswith("0: ")


def test_linked_shape_params():
    ir, _ = load_program(NODE + "void test(struct node *l, int x) { }")
    assert isinstance(ir.shape.params[0], LinkedParam)
