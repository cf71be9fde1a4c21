"""Concrete semantics of the IR and a bounded exhaustive oracle."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Sequence

from .ir import (
    ArrayParam, Const, InputShape, Instr, IntType, LinkedParam, Null, Operand,
    ProgramIR, PtrType, ScalarParam, StructType, Var, is_ptr,
)

DEFAULT_VALUES = (-1, 0, 1, 2)
NULL_PTR = (0, 0)


@dataclass
class Region:
    kind: str  # "array" or "struct"
    base: int
    bound: int
    cells: dict = field(default_factory=dict)
    from_input: bool = False

    def copy(self) -> "Region":
        return Region(self.kind, self.base, self.bound, dict(self.cells), self.from_input)


@dataclass
class MState:
    """Mutable working state used by the interpreter."""

    pc: int
    locals: dict
    heap: dict
    next_rid: int = 1

    def copy(self) -> "MState":
        return MState(self.pc, dict(self.locals), {k: r.copy() for k, r in self.heap.items()}, self.next_rid)


@dataclass(frozen=True)
class ConcreteState:
    pc: int
    locals: tuple
    heap: tuple
    next_rid: int = 1

    @staticmethod
    def freeze(st: MState) -> "ConcreteState":
        heap = tuple(sorted(
            (rid, r.kind, r.base, r.bound, tuple(sorted(r.cells.items(), key=repr)), r.from_input)
            for rid, r in st.heap.items()
        ))
        return ConcreteState(st.pc, tuple(sorted(st.locals.items())), heap, st.next_rid)

    def thaw(self) -> MState:
        heap = {rid: Region(kind, base, bound, dict(cells), inp) for rid, kind, base, bound, cells, inp in self.heap}
        return MState(self.pc, dict(self.locals), heap, self.next_rid)

    def local(self, name: str):
        return dict(self.locals)[name]


@dataclass(frozen=True)
class ConcreteTrace:
    states: tuple[ConcreteState, ...]
    ir: ProgramIR = field(compare=False, hash=False, repr=False)
    values: tuple[int, ...] = field(default=DEFAULT_VALUES, compare=False, hash=False, repr=False)

    @property
    def last(self) -> ConcreteState:
        return self.states[-1]


@dataclass(frozen=True)
class SafeUpToBound:
    inputs_checked: int
    max_size: int


@dataclass(frozen=True)
class BoundExhausted:
    inputs_checked: int
    max_size: int


@dataclass(frozen=True)
class FailingTraceWitness:
    pcs: tuple[int, ...]
    input_size: int
    inputs: dict = field(compare=False, hash=False)
    trace: tuple[ConcreteState, ...] = field(compare=False, hash=False, repr=False)


class Stuck(Exception):
    pass


def _read(st: MState, a: Operand):
    if isinstance(a, Var):
        return st.locals[a.name]
    if isinstance(a, Const):
        return a.value
    return NULL_PTR


def ptr_valid(heap: dict, p) -> bool:
    rid, off = p
    r = heap.get(rid)
    return rid != 0 and r is not None and r.base <= off < r.bound


def _cmp(op: str, a, b) -> bool:
    if isinstance(a, tuple) or isinstance(b, tuple):
        if not isinstance(a, tuple):
            a = NULL_PTR if a == 0 else (None, a)
        if not isinstance(b, tuple):
            b = NULL_PTR if b == 0 else (None, b)
        if op in ("==", "!="):
            return (a == b) == (op == "==")
        if a[0] != b[0]:
            raise Stuck("ordered comparison across regions")
        a, b = a[1], b[1]
    return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b, "==": a == b, "!=": a != b}[op]


def arith(op: str, a: int, b: int) -> int:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op in ("/", "%"):
        if b == 0:
            raise Stuck("division by zero")
        q = abs(a) // abs(b)
        if (a < 0) != (b < 0):
            q = -q
        return q if op == "/" else a - q * b
    if op == "&":
        return a & b
    if op == "|":
        return a | b
    if op == "^":
        return a ^ b
    if op == "<<":
        return a << b if 0 <= b < 64 else 0
    if op == ">>":
        return a >> b if 0 <= b < 64 else 0
    raise ValueError(op)


def _wrap(t, v):
    return t.wrap(v) if isinstance(t, IntType) else v


def _arith_result(t, v):
    """Unsigned results wrap; signed overflow is undefined and ends the execution."""
    if isinstance(t, IntType) and t.signed and not (t.lo <= v <= t.hi):
        raise Stuck("signed overflow")
    return _wrap(t, v)


def exec_step(ir: ProgramIR, st: MState, values: Sequence[int]) -> list[MState]:
    """All one-step successors of ``st``; the input state may be reused."""
    ins: Instr = ir.instrs[st.pc]
    op = ins.opcode
    try:
        if op in ("halt", "fail"):
            return []
        if op in ("jump", "ignore"):
            st.pc = ins.succs[0]
            return [st]
        if op == "assign":
            v = _read(st, ins.args[0])
            t = ir.locals.get(ins.dst)
            if is_ptr(t) and not isinstance(v, tuple):
                v = NULL_PTR
            st.locals[ins.dst] = _wrap(t, v)
        elif op == "binop":
            a, b = _read(st, ins.args[0]), _read(st, ins.args[1])
            st.locals[ins.dst] = _arith_result(ins.ctype, arith(ins.op, a, b))
        elif op == "unop":
            a = _read(st, ins.args[0])
            st.locals[ins.dst] = _arith_result(ins.ctype, -a if ins.op == "-" else ~a)
        elif op == "cast":
            a = _read(st, ins.args[0])
            if isinstance(ins.ctype, IntType):
                if isinstance(a, tuple):
                    if a != NULL_PTR:
                        raise Stuck("pointer to int cast")
                    a = 0
                st.locals[ins.dst] = ins.ctype.wrap(a)
            else:
                st.locals[ins.dst] = a if isinstance(a, tuple) else NULL_PTR
        elif op == "ptradd":
            p, k = _read(st, ins.args[0]), _read(st, ins.args[1])
            st.locals[ins.dst] = (p[0], p[1] + k if ins.op != "-" else p[1] - k)
        elif op == "ptrdiff":
            p, q = _read(st, ins.args[0]), _read(st, ins.args[1])
            if p[0] != q[0]:
                raise Stuck("difference across regions")
            st.locals[ins.dst] = _arith_result(ins.ctype, p[1] - q[1])
        elif op == "load":
            p = _read(st, ins.args[0])
            if not ptr_valid(st.heap, p):
                raise Stuck("unchecked invalid load")
            v = st.heap[p[0]].cells.get((p[1], ins.field))
            if v is None:
                v = NULL_PTR if is_ptr(ins.ctype) else 0
            st.locals[ins.dst] = v
        elif op == "store":
            p, v = _read(st, ins.args[0]), _read(st, ins.args[1])
            if not ptr_valid(st.heap, p):
                raise Stuck("unchecked invalid store")
            st.heap[p[0]].cells[(p[1], ins.field)] = v
        elif op == "alloc":
            count = _read(st, ins.args[0]) if ins.args else None
            rid = st.next_rid
            st.next_rid += 1
            if count is None:
                st.heap[rid] = Region("struct", 0, 1)
            else:
                if count < 0:
                    raise Stuck("negative allocation")
                st.heap[rid] = Region("array", 0, count)
            st.locals[ins.dst] = (rid, 0)
        elif op == "branch":
            a, b = _read(st, ins.args[0]), _read(st, ins.args[1])
            st.pc = ins.succs[0] if _cmp(ins.op, a, b) else ins.succs[1]
            return [st]
        elif op == "check":
            if ins.kind == "ptr":
                ok = ptr_valid(st.heap, _read(st, ins.args[0]))
            else:
                a, b = _read(st, ins.args[0]), _read(st, ins.args[1])
                r = arith(ins.op, a, b) if ins.op != "neg" else -a
                ok = ins.ctype.lo <= r <= ins.ctype.hi
            st.pc = ins.succs[0] if ok else ins.succs[1]
            return [st]
        elif op == "nondet":
            outs = []
            seen = set()
            for v in values:
                v = _wrap(ins.ctype, v) if isinstance(ins.ctype, IntType) else NULL_PTR
                if v in seen:
                    continue
                seen.add(v)
                s2 = st.copy()
                s2.locals[ins.dst] = v
                s2.pc = ins.succs[0]
                outs.append(s2)
            return outs
        else:
            raise ValueError(op)
    except Stuck:
        return []
    st.pc = ins.succs[0]
    return [st]


def concrete_step(t: ConcreteTrace) -> set[ConcreteTrace]:
    st = t.last.thaw()
    return {
        ConcreteTrace(t.states + (ConcreteState.freeze(s),), t.ir, t.values)
        for s in exec_step(t.ir, st, t.values)
    }


def is_failing(ir: ProgramIR, st) -> bool:
    return ir.instrs[st.pc].opcode == "fail"


# ---------------------------------------------------------------- inputs

def _scalar_values(t, values):
    if isinstance(t, IntType):
        return sorted({t.wrap(v) for v in values})
    return [NULL_PTR]


def _linked_shapes(ir: ProgramIR, struct: str, budget: int) -> Iterator[tuple[int, object]]:
    """Yield (node count, node description) for acyclic structures of ``struct``.

    A description is None for NULL or (struct, {field: subdescription}).
    """
    yield 0, None
    if budget <= 0:
        return
    sdef = ir.structs[struct]
    ptr_fields = [(f, t.target.name) for f, t in sdef.fields if isinstance(t, PtrType) and isinstance(t.target, StructType)]

    def fill(idx: int, remaining: int):
        if idx == len(ptr_fields):
            yield 0, {}
            return
        fname, target = ptr_fields[idx]
        for used, sub in _linked_shapes(ir, target, remaining):
            for used2, rest in fill(idx + 1, remaining - used):
                d = dict(rest)
                d[fname] = sub
                yield used + used2, d

    for used, children in fill(0, budget - 1):
        yield used + 1, (struct, children)


def _materialize(ir, desc, st: MState, values, out_choices):
    """Build regions for ``desc``; scalar fields are enumerated by the caller."""
    if desc is None:
        return NULL_PTR
    struct, children = desc
    rid = st.next_rid
    st.next_rid += 1
    reg = Region("struct", 0, 1, {}, True)
    st.heap[rid] = reg
    for fname, t in ir.structs[struct].fields:
        if fname in children:
            reg.cells[(0, fname)] = _materialize(ir, children[fname], st, values, out_choices)
        elif isinstance(t, PtrType):
            reg.cells[(0, fname)] = NULL_PTR
        else:
            out_choices.append((rid, (0, fname), _scalar_values(t, values)))
    return (rid, 0)


def enumerate_inputs(ir: ProgramIR, shape: InputShape, max_size: int, values=DEFAULT_VALUES) -> Iterator[tuple[MState, int, dict]]:
    """Yield (initial state, input size, description) for every input in bounds."""
    per_param = []
    for p in shape.params:
        if isinstance(p, ScalarParam):
            per_param.append([("scalar", v) for v in _scalar_values(p.ctype, values)])
        elif isinstance(p, ArrayParam):
            per_param.append([("array", n) for n in range(max_size + 1)])
        else:
            per_param.append([("linked", d) for d in _linked_shapes(ir, p.struct, max_size)])

    for combo in itertools.product(*per_param):
        st = MState(ir.entry, {}, {}, 1)
        choices = []
        size = 0
        desc = {}
        for p, (kind, val) in zip(shape.params, combo):
            if kind == "scalar":
                st.locals[p.local] = val
                desc[p.local] = val
            elif kind == "array":
                rid = st.next_rid
                st.next_rid += 1
                st.heap[rid] = Region("array", 0, val, {}, True)
                st.locals[p.ptr_local] = (rid, 0)
                st.locals[p.len_local] = val
                size += 1 + val
                for j in range(val):
                    choices.append((rid, (j, None), _scalar_values(p.elem, values)))
                desc[p.name] = ("array", rid, val)
            else:
                count, d = val
                st.locals[p.local] = _materialize(ir, d, st, values, choices)
                size += count
                desc[p.local] = ("linked", count)
        for vals in itertools.product(*[c[2] for c in choices]):
            s2 = st.copy()
            for (rid, key, _), v in zip(choices, vals):
                s2.heap[rid].cells[key] = v
            for name, t in ir.locals.items():
                if name not in s2.locals:
                    s2.locals[name] = NULL_PTR if is_ptr(t) else 0
            yield s2, size, {"params": desc, "cells": vals}


def enumerate_reachable(ir: ProgramIR, shape: InputShape | None = None, max_size: int = 3,
                        max_steps: int = 10_000, values=DEFAULT_VALUES):
    """Exhaustively run every input within ``max_size``.

    Returns the first FailingTraceWitness found (smallest inputs first),
    otherwise SafeUpToBound, or BoundExhausted if some path ran out of steps.
    """
    shape = shape if shape is not None else ir.shape
    inputs = sorted(enumerate_inputs(ir, shape, max_size, values), key=lambda x: x[1])
    exhausted = False
    for count, (st0, size, desc) in enumerate(inputs, 1):
        init = ConcreteState.freeze(st0)
        stack = [(st0, 0, (st0.pc,))]
        while stack:
            st, steps, pcs = stack.pop()
            while True:
                if ir.instrs[st.pc].opcode == "fail":
                    trace = _replay(ir, init, pcs, values)
                    return FailingTraceWitness(pcs, size, desc, trace)
                if steps >= max_steps:
                    exhausted = True
                    break
                succ = exec_step(ir, st, values)
                if not succ:
                    break
                steps += 1
                for extra in succ[1:]:
                    stack.append((extra, steps, pcs + (extra.pc,)))
                st = succ[0]
                pcs = pcs + (st.pc,)
    n = len(inputs)
    return BoundExhausted(n, max_size) if exhausted else SafeUpToBound(n, max_size)


def _replay(ir, init: ConcreteState, pcs, values) -> tuple[ConcreteState, ...]:
    states = [init]
    cur = init
    for pc in pcs[1:]:
        for s in exec_step(ir, cur.thaw(), values):
            if s.pc == pc:
                cur = ConcreteState.freeze(s)
                states.append(cur)
                break
        else:
            break
    return tuple(states)


def run_concrete(ir: ProgramIR, st: MState, values=DEFAULT_VALUES, max_steps: int = 10_000) -> list[MState]:
    """Final states of all executions starting from ``st``."""
    finals = []
    stack = [(st, 0)]
    while stack:
        s, steps = stack.pop()
        while True:
            if steps >= max_steps:
                break
            nxt = exec_step(ir, s.copy(), values)
            if not nxt:
                finals.append(s)
                break
            steps += 1
            for extra in nxt[1:]:
                stack.append((extra, steps))
            s = nxt[0]
    return finals


def trace_size(t: ConcreteTrace | Sequence[ConcreteState], ir: ProgramIR | None = None) -> int:
    """Reachable input regions and array elements of the first state, plus mallocs."""
    states = t.states if isinstance(t, ConcreteTrace) else tuple(t)
    ir = t.ir if isinstance(t, ConcreteTrace) else ir
    if not states:
        return 0
    first = states[0].thaw()
    seen = set()
    todo = [v[0] for v in first.locals.values() if isinstance(v, tuple) and v[0] != 0]
    total = 0
    while todo:
        rid = todo.pop()
        if rid in seen or rid not in first.heap:
            continue
        seen.add(rid)
        reg = first.heap[rid]
        total += 1
        if reg.kind == "array":
            total += max(reg.bound - reg.base, 0)
        for v in reg.cells.values():
            if isinstance(v, tuple) and v[0] != 0:
                todo.append(v[0])
    if ir is not None:
        for s in states[:-1]:
            if ir.instrs[s.pc].opcode == "alloc":
                total += 1
    return total
