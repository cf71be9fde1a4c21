"""Check instrumentation and the dataflow pre-pass."""

from __future__ import annotations

from dataclasses import replace

from .ir import Instr, IntType, LoopInfo, ProgramIR, Var

PURE_DEFS = ("assign", "binop", "unop", "cast", "ptradd", "ptrdiff", "load", "nondet")
OVERFLOW_OPS = ("+", "-", "*")


def compact(ir: ProgramIR, instrs: list[Instr | None], redirect: dict[int, int] | None = None,
            entry: int | None = None) -> ProgramIR:
    """Drop ``None`` slots and unreachable code, renumbering ids and loop markers.

    ``redirect`` maps removed ids to where control now goes.
    """
    redirect = dict(redirect or {})

    def target(i: int) -> int:
        hops = 0
        while i in redirect and hops <= len(instrs):
            i = redirect[i]
            hops += 1
        return i

    entry = target(ir.entry if entry is None else entry)
    reach: set[int] = set()
    todo = [entry]
    while todo:
        i = todo.pop()
        if i in reach or instrs[i] is None:
            continue
        reach.add(i)
        todo.extend(target(s) for s in instrs[i].succs)
    keep = sorted(reach)
    new_id = {old: new for new, old in enumerate(keep)}
    out = [replace(instrs[old], id=new_id[old], succs=tuple(new_id[target(s)] for s in instrs[old].succs)) for old in keep]
    loops = []
    for lp in ir.loops:
        marks = (lp.entrance, lp.iteration, lp.end, lp.header)
        if not all(target(m) in new_id for m in marks):
            continue
        loops.append(LoopInfo(
            lp.loop_id, new_id[target(lp.entrance)], new_id[target(lp.iteration)], new_id[target(lp.end)],
            new_id[target(lp.header)], lp.relevant,
            frozenset(new_id[b] for b in lp.body if b in new_id),
        ))
    return replace(ir, instrs=tuple(out), entry=new_id[entry], loops=tuple(loops))


def _needs_overflow_check(ins: Instr) -> bool:
    return ins.opcode == "binop" and ins.op in OVERFLOW_OPS and isinstance(ins.ctype, IntType)


def instrument_checks(ir: ProgramIR, overflow: bool | None = None) -> ProgramIR:
    """Guard every load and store with a pointer-validity check.

    Accesses already directly preceded by an equivalent check are left alone,
    which keeps the pass idempotent.  With ``overflow`` set, integer ``+ - *``
    also get a range check.
    """
    overflow = ir.overflow_checks if overflow is None else overflow
    preceded: set[tuple] = set()
    for ins in ir.instrs:
        if ins.opcode == "check" and ins.succs:
            preceded.add((ins.succs[0], ins.kind, ins.args))

    plan: list[list[tuple]] = []
    for ins in ir.instrs:
        need = []
        if ins.opcode in ("load", "store"):
            key = (ins.id, "ptr", (ins.args[0],))
            if key not in preceded:
                need.append(("ptr", (ins.args[0],), None, None))
        elif overflow and _needs_overflow_check(ins):
            key = (ins.id, "overflow", ins.args)
            if key not in preceded:
                need.append(("overflow", ins.args, ins.op, ins.ctype))
        plan.append(need)

    starts = []
    pos = 0
    for need in plan:
        starts.append(pos)
        pos += len(need) + 1
    fail_base = pos
    out: list[Instr] = []
    nfail = 0
    fails = []

    for ins, need in zip(ir.instrs, plan):
        cur = starts[ins.id]
        for kind, args, op, ct in need:
            fid = fail_base + nfail
            nfail += 1
            out.append(Instr(cur, "check", args=args, succs=(cur + 1, fid), op=op, ctype=ct, kind=kind, line=ins.line))
            fails.append(Instr(fid, "fail", line=ins.line))
            cur += 1
        out.append(replace(ins, id=cur, succs=tuple(starts[s] for s in ins.succs)))
    out.extend(fails)
    loops = tuple(
        LoopInfo(lp.loop_id, starts[lp.entrance], starts[lp.iteration], starts[lp.end], starts[lp.header],
                 lp.relevant, frozenset(starts[b] + k for b in lp.body for k in range(len(plan[b]) + 1)))
        for lp in ir.loops
    )
    return replace(ir, instrs=tuple(out), entry=starts[ir.entry], loops=loops, overflow_checks=overflow)


# ---------------------------------------------------------------- dataflow

def predecessors(ir: ProgramIR) -> list[list[int]]:
    preds: list[list[int]] = [[] for _ in ir.instrs]
    for ins in ir.instrs:
        for s in ins.succs:
            preds[s].append(ins.id)
    return preds


def liveness(ir: ProgramIR) -> list[frozenset[str]]:
    """Live-in variable sets per instruction."""
    n = len(ir.instrs)
    live_in = [frozenset()] * n
    preds = predecessors(ir)
    work = list(range(n))
    on = set(work)
    while work:
        i = work.pop()
        on.discard(i)
        ins = ir.instrs[i]
        out = set()
        for s in ins.succs:
            out |= live_in[s]
        if ins.dst:
            out.discard(ins.dst)
        out.update(ins.uses())
        new = frozenset(out)
        if new != live_in[i]:
            live_in[i] = new
            for p in preds[i]:
                if p not in on:
                    on.add(p)
                    work.append(p)
    return live_in


def _available_checks(ir: ProgramIR) -> list[set | None]:
    """Must-available check keys at entry of every instruction."""
    preds = predecessors(ir)
    n = len(ir.instrs)
    avail_in: list[set | None] = [None] * n
    avail_in[ir.entry] = set()

    def transfer(i: int, facts: set) -> dict[int, set]:
        ins = ir.instrs[i]
        outs = {}
        for k, s in enumerate(ins.succs):
            f = set(facts)
            if ins.opcode == "check" and k == 0:
                f.add((ins.kind, ins.args, ins.op))
            if ins.dst:
                f = {c for c in f if Var(ins.dst) not in c[1]}
            outs[s] = f
        return outs

    changed = True
    while changed:
        changed = False
        for i in range(n):
            if avail_in[i] is None:
                continue
            for s, f in transfer(i, avail_in[i]).items():
                if s == ir.entry:
                    f = set()
                cur = avail_in[s]
                new = f if cur is None else cur & f
                if cur is None or new != cur:
                    avail_in[s] = new
                    changed = True
    return avail_in


def elide_duplicate_checks(ir: ProgramIR) -> ProgramIR:
    avail = _available_checks(ir)
    instrs: list[Instr | None] = list(ir.instrs)
    redirect = {}
    for ins in ir.instrs:
        if ins.opcode == "check" and avail[ins.id] is not None and (ins.kind, ins.args, ins.op) in avail[ins.id]:
            instrs[ins.id] = None
            redirect[ins.id] = ins.succs[0]
    if not redirect:
        return ir
    return compact(ir, instrs, redirect)


def eliminate_dead_stores(ir: ProgramIR) -> ProgramIR:
    while True:
        live = liveness(ir)
        instrs: list[Instr | None] = list(ir.instrs)
        redirect = {}
        for ins in ir.instrs:
            if ins.opcode in PURE_DEFS and ins.dst:
                live_out = set()
                for s in ins.succs:
                    live_out |= live[s]
                if ins.dst not in live_out:
                    instrs[ins.id] = None
                    redirect[ins.id] = ins.succs[0]
        if not redirect:
            return ir
        ir = compact(ir, instrs, redirect)


def thread_jumps(ir: ProgramIR) -> ProgramIR:
    markers = set(ir.loop_by_marker())
    instrs: list[Instr | None] = list(ir.instrs)
    redirect = {}
    for ins in ir.instrs:
        if ins.opcode == "jump" and ins.id not in markers and ins.succs[0] != ins.id:
            instrs[ins.id] = None
            redirect[ins.id] = ins.succs[0]
    return compact(ir, instrs, redirect)


def dataflow_optimize(ir: ProgramIR) -> ProgramIR:
    ir = thread_jumps(ir)
    ir = elide_duplicate_checks(ir)
    ir = eliminate_dead_stores(ir)
    return thread_jumps(ir)
