"""Abstract herds: a primary trace plus scapegoat traces over a shared solver.

Each trace keeps the environment of its last state as a map from slots
(locals, concrete heap cells, summary arrays, region bounds, size) to solver
terms.  Locations a step does not touch keep their term, which is how frame
conditions are expressed.  The primary additionally keeps its first state,
from which scapegoats on shrunk inputs are built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .ir import (
    ArrayParam, Const, InputShape, Instr, IntType, LinkedParam, NEGATE_CMP, Null,
    ProgramIR, PtrType, ScalarParam, StructType, Var, is_ptr,
)
from .passes import liveness
from .solver import ZERO, Inconsistent, Solver

# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class DomainConfig:
    unroll: int = 2
    prefix: int = 2
    major_threshold: int = 8
    size_bound: int = 1
    scapegoats: bool = True
    row_depth: int = 4


@dataclass(frozen=True)
class Major:
    id: int
    kind: str  # "array" | "struct"
    prefix: int  # minors below this are concrete cells
    fields: tuple  # ((field, ctype), ...); field None for scalar elements
    label: str
    site: Optional[int] = None


@dataclass(frozen=True)
class ShrinkOption:
    """One way to build a smaller input.

    ``parts`` lists (kind, param index, detail): ("del", p, j) deletes array
    element j; ("skip", p, (path, field)) bypasses the linked node at ``path``
    through pointer ``field``.
    """

    label: str
    parts: tuple
    exact: bool


class Program:
    """Static facts shared by every herd of one verification run."""

    def __init__(self, ir: ProgramIR, cfg: DomainConfig):
        self.ir = ir
        self.cfg = cfg
        self.live = liveness(ir)
        self.markers = ir.loop_by_marker()
        self.loops = {lp.loop_id: lp for lp in ir.loops}
        self.majors: dict[int, Major] = {}
        self.site_major: dict[int, int] = {}
        self.param_layout: list = []
        self._layout_inputs()
        for ins in ir.instrs:
            if ins.opcode == "alloc":
                mid = len(self.majors) + 1
                et = ins.ctype
                if isinstance(et, StructType) and not ins.args:
                    fields = ir.structs[et.name].fields
                    self.majors[mid] = Major(mid, "struct", 1, fields, f"malloc@{ins.id}", ins.id)
                else:
                    fields = ir.structs[et.name].fields if isinstance(et, StructType) else ((None, et),)
                    self.majors[mid] = Major(mid, "array", cfg.prefix, fields, f"malloc@{ins.id}", ins.id)
                self.site_major[ins.id] = mid
        self.options = self._shrink_options()

    def _new_major(self, kind, prefix, fields, label) -> int:
        mid = len(self.majors) + 1
        self.majors[mid] = Major(mid, kind, prefix, tuple(fields), label)
        return mid

    def _layout_inputs(self) -> None:
        ir, P = self.ir, self.cfg.prefix
        for idx, p in enumerate(ir.shape.params):
            if isinstance(p, ArrayParam):
                fields = ir.structs[p.elem.name].fields if isinstance(p.elem, StructType) else ((None, p.elem),)
                mid = self._new_major("array", P, fields, p.name)
                self.param_layout.append(("array", mid))
            elif isinstance(p, LinkedParam):
                summaries: dict[str, int] = {}
                nodes: dict[tuple, int] = {}

                def summary_for(sname: str) -> int:
                    if sname not in summaries:
                        summaries[sname] = self._new_major("struct", 0, ir.structs[sname].fields, f"{p.local}:{sname}*")
                    return summaries[sname]

                def build(sname: str, path: tuple) -> None:
                    nodes[path] = self._new_major("struct", 1, ir.structs[sname].fields,
                                                  f"{p.local}" + "".join("->" + f for f in path))
                    if len(path) + 1 < P:
                        for f, ft in ir.structs[sname].fields:
                            if isinstance(ft, PtrType) and isinstance(ft.target, StructType):
                                build(ft.target.name, path + (f,))

                build(p.struct, ())
                for path in list(nodes):
                    sname = self._struct_at(p.struct, path)
                    for f, ft in ir.structs[sname].fields:
                        if isinstance(ft, PtrType) and isinstance(ft.target, StructType) and path + (f,) not in nodes:
                            summary_for(ft.target.name)
                # summary nodes can point to further summary nodes of each target type
                changed = True
                while changed:
                    changed = False
                    for sname in list(summaries):
                        for f, ft in ir.structs[sname].fields:
                            if isinstance(ft, PtrType) and isinstance(ft.target, StructType) and ft.target.name not in summaries:
                                summary_for(ft.target.name)
                                changed = True
                self.param_layout.append(("linked", nodes, summaries))
            else:
                self.param_layout.append(("scalar",))

    def _struct_at(self, root: str, path: tuple) -> str:
        sname = root
        for f in path:
            sname = self.ir.structs[sname].field_type(f).target.name
        return sname

    def _shrink_options(self) -> list[ShrinkOption]:
        k = self.cfg.size_bound
        opts = []
        structural = []
        for idx, (p, lay) in enumerate(zip(self.ir.shape.params, self.param_layout)):
            if lay[0] == "array":
                for j in range(min(k, self.cfg.prefix)):
                    opts.append(ShrinkOption(f"{p.name}[{j}]", (("del", idx, j),), True))
                structural.append(("del", idx, 0))
            elif lay[0] == "linked":
                nodes = lay[1]
                order = sorted(nodes, key=lambda path: (len(path), path))[:k]
                single = True
                for path in order:
                    sname = self._struct_at(p.struct, path)
                    ptrs = [f for f, ft in self.ir.structs[sname].fields if isinstance(ft, PtrType) and isinstance(ft.target, StructType)]
                    single = single and len(ptrs) == 1
                    for f in ptrs:
                        opts.append(ShrinkOption(f"{p.local}" + "".join("->" + x for x in path) + f"~{f}",
                                                 (("skip", idx, (path, f)),), len(ptrs) == 1))
                root_ptrs = [f for f, ft in self.ir.structs[p.struct].fields if isinstance(ft, PtrType) and isinstance(ft.target, StructType)]
                if len(root_ptrs) == 1:
                    structural.append(("skip", idx, ((), root_ptrs[0])))
        if len(structural) > 1:
            opts.append(ShrinkOption("joint", tuple(structural), True))
        return opts


# ---------------------------------------------------------------- herd values


@dataclass
class Trace:
    pc: int
    env: dict
    origin: str = "primary"
    allocs: dict = field(default_factory=dict)
    sdom: dict = field(default_factory=dict)
    forced: Optional[str] = None

    def copy(self) -> "Trace":
        return Trace(self.pc, dict(self.env), self.origin, dict(self.allocs), dict(self.sdom), self.forced)


class NeedSplit(Exception):
    """The next instruction of a trace depends on facts the solver cannot decide."""

    def __init__(self, alternatives: list):
        super().__init__()
        self.alternatives = alternatives


class Blocked(Exception):
    """The trace cannot take a step (execution is stuck or undecidable)."""


@dataclass
class Herd:
    prog: Program
    traces: list
    solver: Solver
    path: tuple = ()
    counts: dict = field(default_factory=dict)
    touched: frozenset = frozenset()
    added: frozenset = frozenset()
    first: Optional[dict] = None
    first_sdom: dict = field(default_factory=dict)
    last_instr: Optional[int] = None
    widen_point: bool = False
    _facts: object = None
    _key: object = None

    def clone(self) -> "Herd":
        return Herd(self.prog, [t.copy() for t in self.traces], self.solver.clone(), self.path, dict(self.counts),
                    self.touched, self.added, None if self.first is None else dict(self.first), dict(self.first_sdom),
                    self.last_instr, self.widen_point)

    @property
    def arity(self) -> int:
        return len(self.traces)

    @property
    def primary(self) -> Trace:
        return self.traces[0]

    def key(self) -> tuple:
        if self._key is None:
            self._key = (
                self.path,
                tuple((t.pc, t.origin, t.forced, tuple(sorted(t.allocs.items())),
                       tuple(sorted((k, tuple(sorted(v))) for k, v in t.sdom.items()))) for t in self.traces),
                tuple(sorted(self.counts.items())), self.touched, self.added, self.first is not None,
            )
        return self._key

    def invalidate(self) -> None:
        self._facts = None
        self._key = None


# ---------------------------------------------------------------- initial herd


def _slot_kinds(ctype) -> tuple:
    return ("M", "m") if is_ptr(ctype) else ("i",)


def initial_herd(prog: Program) -> Herd:
    """Arity-1 herd whose primary ranges over every harness input."""
    ir, s = prog.ir, Solver()
    env: dict = {}
    sdom: dict = {}
    nonneg = None
    for p, lay in zip(ir.shape.params, prog.param_layout):
        if isinstance(p, ScalarParam):
            env[("v", p.local)] = s.fresh_typed(p.ctype)
        elif isinstance(p, ArrayParam):
            mid = lay[1]
            maj = prog.majors[mid]
            n = s.fresh_typed(p.len_type)
            s.assert_le(ZERO, n, 0)
            env[("v", p.len_local)] = n
            env[("v", p.ptr_local, "M")] = s.const(mid)
            env[("v", p.ptr_local, "m")] = ZERO
            env[("base", mid)] = ZERO
            env[("bound", mid)] = n
            for j in range(maj.prefix):
                for f, ft in maj.fields:
                    _init_cell(s, env, mid, j, f, ft)
            for f, ft in maj.fields:
                for comp in _slot_kinds(ft):
                    env[("s", mid, f, comp)] = s.fresh("a")
        else:
            nodes, summaries = lay[1], lay[2]
            root_sname = p.struct

            def ptr_to(path: tuple, target: str):
                if path in nodes:
                    M = s.fresh("n")
                    s.restrict(M, {0, nodes[path]})
                    return M, ZERO
                sm = summaries[target]
                M = s.fresh("n")
                s.restrict(M, {0, sm})
                m = s.fresh("n")
                s.assert_le(ZERO, m, 0)
                return M, m

            M, m = ptr_to((), root_sname)
            env[("v", p.local, "M")] = M
            env[("v", p.local, "m")] = m
            for path, mid in nodes.items():
                sname = prog._struct_at(root_sname, path)
                for f, ft in ir.structs[sname].fields:
                    if isinstance(ft, PtrType) and isinstance(ft.target, StructType):
                        cM, cm = ptr_to(path + (f,), ft.target.name)
                        env[("c", mid, 0, f, "M")] = cM
                        env[("c", mid, 0, f, "m")] = cm
                    else:
                        _init_cell(s, env, mid, 0, f, ft)
            for sname, mid in summaries.items():
                for f, ft in ir.structs[sname].fields:
                    for comp in _slot_kinds(ft):
                        env[("s", mid, f, comp)] = s.fresh("a")
                    if isinstance(ft, PtrType) and isinstance(ft.target, StructType):
                        sdom[(mid, f)] = frozenset({0, summaries[ft.target.name]})
    size = s.fresh("n")
    s.assert_le(ZERO, size, 0)
    env[("size",)] = size
    tr = Trace(ir.entry, env, "primary", {}, dict(sdom))
    first = dict(env) if prog.cfg.scapegoats and prog.options else None
    h = Herd(prog, [tr], s, (ir.entry,), first=first, first_sdom=dict(sdom))
    return h


def _init_cell(s: Solver, env: dict, mid: int, j: int, f, ft) -> None:
    if is_ptr(ft):
        # pointer-valued array elements are unconstrained inputs
        env[("c", mid, j, f, "M")] = s.fresh("n")
        env[("c", mid, j, f, "m")] = s.fresh("n")
    else:
        env[("c", mid, j, f, "i")] = s.fresh_typed(ft)


# ---------------------------------------------------------------- execution


class Exec:
    """Executes the next instruction of one trace of a (mutable, cloned) herd."""

    def __init__(self, h: Herd, ti: int, primary: bool):
        self.h = h
        self.ti = ti
        self.tr: Trace = h.traces[ti]
        self.s: Solver = h.solver
        self.prog = h.prog
        self.primary = primary
        self.touched_summary = False

    # -- values ---------------------------------------------------------
    def slot(self, key, kind: str = "n", rng=None) -> int:
        env = self.tr.env
        t = env.get(key)
        if t is None:
            t = self.s.fresh(kind, rng)
            env[key] = t
        return t

    def local(self, name: str):
        t = self.prog.ir.locals[name]
        if is_ptr(t):
            return (self.slot(("v", name, "M")), self.slot(("v", name, "m")))
        r = (t.lo, t.hi) if isinstance(t, IntType) else None
        return self.slot(("v", name), "n", r)

    def operand(self, a):
        if isinstance(a, Var):
            return self.local(a.name)
        if isinstance(a, Const):
            return self.s.const(a.value)
        return (ZERO, ZERO)

    def set_local(self, name: str, v) -> None:
        if isinstance(v, tuple):
            self.tr.env[("v", name, "M")] = v[0]
            self.tr.env[("v", name, "m")] = v[1]
        else:
            self.tr.env[("v", name)] = v

    # -- decisions ------------------------------------------------------
    def forced(self) -> Optional[str]:
        return self.tr.forced

    def need(self, alternatives: list):
        raise NeedSplit(alternatives)

    def major_of(self, M: int) -> int:
        d = self.s.domain(M)
        if d is not None and len(d) == 1:
            return next(iter(d))
        if d is None or not d:
            raise Blocked("unknown major address")
        self.need([[("dom", M, frozenset([v]))] for v in sorted(d)])

    def decide_cmp(self, op: str, a: int, b: int) -> bool:
        s = self.s
        if op == "<":
            if s.entails_le(a, b, -1):
                return True
            if s.entails_le(b, a, 0):
                return False
            self.need([[("le", a, b, -1)], [("le", b, a, 0)]])
        if op == "<=":
            if s.entails_le(a, b, 0):
                return True
            if s.entails_le(b, a, -1):
                return False
            self.need([[("le", a, b, 0)], [("le", b, a, -1)]])
        if op == ">":
            return self.decide_cmp("<", b, a)
        if op == ">=":
            return self.decide_cmp("<=", b, a)
        if op in ("==", "!="):
            if s.entails_eq(a, b):
                return op == "=="
            if s.entails_ne(a, b):
                return op == "!="
            self.need([[("le", a, b, 0), ("le", b, a, 0)], [("ne", a, b)]])
        raise ValueError(op)

    def decide_ptr_cmp(self, op: str, p, q) -> bool:
        Mp, Mq = self.major_of(p[0]), self.major_of(q[0])
        if op in ("==", "!="):
            if Mp != Mq:
                return op == "!="
            if Mp == 0:
                return op == "=="
            return self.decide_cmp(op, p[1], q[1])
        if Mp != Mq or Mp == 0:
            raise Blocked("ordered comparison of unrelated pointers")
        return self.decide_cmp(op, p[1], q[1])

    def region_check(self, p) -> bool:
        f = self.forced()
        if f in ("ok", "bad"):
            return f == "ok"
        M = self.major_of(p[0])
        if M == 0:
            return False
        maj = self.prog.majors.get(M)
        if maj is None:
            return False
        if maj.kind == "struct":
            return True
        base, bound = self.tr.env.get(("base", M)), self.tr.env.get(("bound", M))
        if base is None or bound is None:
            if self.primary:
                self.need([[("force", "ok")], [("force", "bad")]])
            raise Blocked("unknown region bounds")
        m, s = p[1], self.s
        if s.entails_le(base, m, 0) and s.entails_le(m, bound, -1):
            return True
        if s.entails_le(m, base, -1) or s.entails_le(bound, m, 0):
            return False
        self.need([[("le", base, m, 0), ("le", m, bound, -1)], [("le", m, base, -1)], [("le", bound, m, 0)]])

    def location(self, p):
        """('cell', M, j) or ('summary', M) for a valid pointer."""
        M = self.major_of(p[0])
        maj = self.prog.majors[M]
        m, s = p[1], self.s
        P = maj.prefix
        if P > 0:
            for j in range(P):
                c = s.const(j)
                if s.entails_eq(m, c):
                    return ("cell", M, j)
            if s.entails_le(s.const(P), m, 0):
                return ("summary", M)
            alts = [[("le", m, s.const(j), 0), ("le", s.const(j), m, 0)] for j in range(P)]
            alts.append([("le", s.const(P), m, 0)])
            # negative minors are excluded by the region check for arrays
            if maj.kind == "array":
                alts.append([("le", m, ZERO, -1)])
            self.need(alts)
        return ("summary", M)

    # -- memory ---------------------------------------------------------
    def _comps(self, ft):
        return _slot_kinds(ft)

    def read_summary(self, arr: int, idx: int, depth: int = 0) -> int:
        s = self.s
        defs = s.store_defs(arr)
        for app in defs:
            B, k, v = app.args
            if s.entails_eq(idx, k):
                return v
            if s.entails_ne(idx, k):
                return self.read_summary(B, idx, depth + 1)
        if defs:
            if self.primary and depth < self.prog.cfg.row_depth and self.forced() != "fresh":
                B, k, v = defs[0].args
                self.need([[("le", idx, k, 0), ("le", k, idx, 0)], [("le", idx, k, -1)], [("le", k, idx, -1)]])
            if not self.primary and self.forced() != "fresh":
                raise Blocked("unresolved read over write")
        r = s.find_app("select", (arr, idx))
        if r is None:
            r = s.fresh("n")
            s.add_app("select", (arr, idx), r)
        return r

    def load(self, p, fld, ct):
        loc = self.location(p)
        env = self.tr.env
        if loc[0] == "cell":
            _, M, j = loc
            if is_ptr(ct):
                return (self.slot(("c", M, j, fld, "M")), self.slot(("c", M, j, fld, "m")))
            return self.slot(("c", M, j, fld, "i"), "n", (ct.lo, ct.hi) if isinstance(ct, IntType) else None)
        M = loc[1]
        self.touched_summary = True
        idx = p[1]
        if is_ptr(ct):
            A = self.slot(("s", M, fld, "M"), "a")
            B = self.slot(("s", M, fld, "m"), "a")
            vM = self.read_summary(A, idx)
            vm = self.read_summary(B, idx)
            dom = self.tr.sdom.get((M, fld))
            if dom is not None:
                self.s.restrict(vM, dom)
            return (vM, vm)
        A = self.slot(("s", M, fld, "i"), "a")
        v = self.read_summary(A, idx)
        if isinstance(ct, IntType):
            rng = self.s.ranges.get(v)
            if rng is None:
                self.s.ranges[v] = (ct.lo, ct.hi)
                self.s.assert_le(v, ZERO, ct.hi)
                self.s.assert_le(ZERO, v, -ct.lo)
        del env
        return v

    def store(self, p, fld, ct, val) -> None:
        loc = self.location(p)
        if loc[0] == "cell":
            _, M, j = loc
            if is_ptr(ct):
                self.tr.env[("c", M, j, fld, "M")] = val[0]
                self.tr.env[("c", M, j, fld, "m")] = val[1]
            else:
                self.tr.env[("c", M, j, fld, "i")] = val
            return
        M = loc[1]
        self.touched_summary = True
        idx = p[1]
        if is_ptr(ct):
            for comp, v in (("M", val[0]), ("m", val[1])):
                A = self.slot(("s", M, fld, comp), "a")
                A2 = self.s.fresh("a")
                self.s.add_app("store", (A, idx, v), A2)
                self.tr.env[("s", M, fld, comp)] = A2
            d = self.s.domain(val[0])
            old = self.tr.sdom.get((M, fld), frozenset())
            if d is None:
                raise Blocked("storing a pointer with unknown major")
            self.tr.sdom[(M, fld)] = frozenset(old | d)
            return
        A = self.slot(("s", M, fld, "i"), "a")
        A2 = self.s.fresh("a")
        self.s.add_app("store", (A, idx, val), A2)
        self.tr.env[("s", M, fld, "i")] = A2

    # -- arithmetic -----------------------------------------------------
    def no_signed_overflow(self, lo, hi, ct: IntType) -> bool:
        """Signed overflow is undefined: the primary assumes it away, a scapegoat must rule it out.

        Returns True when the result is known to be in range and False when the
        caller should assume it.
        """
        if lo is not None and hi is not None and ct.lo <= lo and hi <= ct.hi:
            return True
        if self.primary:
            return False
        raise Blocked("possible signed overflow")

    def wrap_linear(self, base: int, off: int, ct: IntType, arith: bool = False) -> int:
        """Value of base+off in ``ct``; splits the primary when wrapping is undecided."""
        s = self.s
        lo, hi = s.bounds(base)
        lo = None if lo is None else lo + off
        hi = None if hi is None else hi + off
        if arith and ct.signed:
            if not self.no_signed_overflow(lo, hi, ct):
                s.assert_le(base, ZERO, ct.hi - off)
                s.assert_le(ZERO, base, off - ct.lo)
            t = s.fresh("n", (ct.lo, ct.hi))
            s.assert_eq_off(t, base, off)
            return t
        width = 1 << ct.bits
        f = self.forced()
        if f == "fresh":
            return s.fresh("n", (ct.lo, ct.hi))
        if f in ("w0", "w-", "w+"):
            shift = {"w0": 0, "w-": -width, "w+": width}[f]
        elif lo is not None and hi is not None and ct.lo <= lo and hi <= ct.hi:
            shift = 0
        elif lo is not None and hi is not None and lo > ct.hi and hi - width <= ct.hi:
            shift = -width
        elif lo is not None and hi is not None and hi < ct.lo and lo + width >= ct.lo:
            shift = width
        elif self.primary:
            alts = []
            # in range: ct.lo <= base + off <= ct.hi
            alts.append([("le", base, ZERO, ct.hi - off), ("le", ZERO, base, off - ct.lo), ("force", "w0")])
            alts.append([("le", ZERO, base, off - ct.hi - 1), ("le", base, ZERO, ct.hi + width - off), ("force", "w-")])
            alts.append([("le", base, ZERO, ct.lo - off - 1), ("le", ZERO, base, off - ct.lo + width), ("force", "w+")])
            # values farther away wrap more than once; keep a sound catch-all
            alts.append([("le", ZERO, base, off - ct.hi - width - 1), ("force", "fresh")])
            alts.append([("le", base, ZERO, ct.lo - off - width - 1), ("force", "fresh")])
            self.need(alts)
        else:
            return s.fresh("n", (ct.lo, ct.hi))
        total = off + shift
        if total == 0 and s.ranges.get(base) == (ct.lo, ct.hi):
            return base
        t = s.fresh("n", (ct.lo, ct.hi))
        s.assert_eq_off(t, base, total)
        # type ranges are not edges, so carry a narrower source range over explicitly
        if lo is not None and hi is not None and shift == 0:
            s.assert_le(t, ZERO, hi)
            s.assert_le(ZERO, t, -lo)
        return t

    def constant_of(self, t: int) -> Optional[int]:
        return self.s.value(t)

    def binop(self, ins: Instr):
        ct: IntType = ins.ctype
        op = ins.op
        a, b = (self.operand(x) for x in ins.args)
        s = self.s
        ca, cb = s.value(a), s.value(b)
        if ca is not None and cb is not None:
            from .concrete import Stuck, arith
            try:
                v = arith(op, ca, cb)
            except Stuck:
                raise Blocked("division by zero")
            if ct.signed and not (ct.lo <= v <= ct.hi):
                raise Blocked("signed overflow")
            return s.const(ct.wrap(v))
        if op in ("+", "-"):
            if cb is not None:
                return self.wrap_linear(a, cb if op == "+" else -cb, ct, arith=True)
            if ca is not None and op == "+":
                return self.wrap_linear(b, ca, ct, arith=True)
            return self.two_term(op, a, b, ct)
        lo_a, hi_a = s.bounds(a)
        lo_b, hi_b = s.bounds(b)
        rng = None
        if None not in (lo_a, hi_a, lo_b, hi_b):
            if op == "*":
                prods = [lo_a * lo_b, lo_a * hi_b, hi_a * lo_b, hi_a * hi_b]
                rng = (min(prods), max(prods))
            elif op == "&" and lo_a >= 0 and lo_b >= 0:
                rng = (0, min(hi_a, hi_b))
            elif op in ("/", "%") and lo_b > 0 and lo_a >= 0:
                rng = (0, hi_a) if op == "/" else (0, min(hi_a, hi_b - 1))
        if op == "%" and cb is not None and cb > 0 and lo_a is not None and lo_a >= 0:
            rng = (0, cb - 1)
        in_range = rng is not None and ct.lo <= rng[0] and rng[1] <= ct.hi
        if ct.signed and not in_range and op in ("*", "<<") and not self.primary:
            raise Blocked("possible signed overflow")
        t = s.fresh("n", (ct.lo, ct.hi))
        self.record_app(op, a, b, ct, t)
        if in_range:
            s.assert_le(t, ZERO, rng[1])
            s.assert_le(ZERO, t, -rng[0])
        return t

    def record_app(self, op: str, a: int, b: int, ct: IntType, t: int) -> None:
        # repeated computations of the same expression share a result by congruence
        fn = f"{op}/{ct.bits}{'s' if ct.signed else 'u'}"
        self.s.add_app(fn, (a, b), t)
        if op in ("+", "*", "&", "|", "^"):
            self.s.add_app(fn, (b, a), t)

    def two_term(self, op: str, a: int, b: int, ct: IntType) -> int:
        s = self.s
        lo_a, hi_a = s.bounds(a)
        lo_b, hi_b = s.bounds(b)
        t = s.fresh("n", (ct.lo, ct.hi))
        self.record_app(op, a, b, ct, t)
        lo = hi = None
        if None not in (lo_a, hi_a, lo_b, hi_b):
            if op == "+":
                lo, hi = lo_a + lo_b, hi_a + hi_b
            else:
                lo, hi = lo_a - hi_b, hi_a - lo_b
        if ct.signed:
            self.no_signed_overflow(lo, hi, ct)
            # without overflow the result is the mathematical one
            lo = ct.lo if lo is None else max(lo, ct.lo)
            hi = ct.hi if hi is None else min(hi, ct.hi)
        elif lo is None or not (ct.lo <= lo and hi <= ct.hi):
            return t
        self.relate_sum(t, a, b, op, lo, hi)
        return t

    def relate_sum(self, t: int, a: int, b: int, op: str, lo: int, hi: int) -> None:
        """Facts for t = a + b or t = a - b (no wrapping)."""
        s = self.s
        s.assert_le(t, ZERO, hi)
        s.assert_le(ZERO, t, -lo)
        lo_a, hi_a = s.bounds(a)
        lo_b, hi_b = s.bounds(b)
        if op == "+":
            # t - a = b, t - b = a
            if hi_b is not None:
                s.assert_le(t, a, hi_b)
            if lo_b is not None:
                s.assert_le(a, t, -lo_b)
            if hi_a is not None:
                s.assert_le(t, b, hi_a)
            if lo_a is not None:
                s.assert_le(b, t, -lo_a)
        else:
            # t = a - b: t - a = -b; and t is bounded by the difference a - b
            if lo_b is not None:
                s.assert_le(t, a, -lo_b)
            if hi_b is not None:
                s.assert_le(a, t, hi_b)
            d_up, d_lo = s.le(a, b), s.le(b, a)
            if d_up is not None:
                s.assert_le(t, ZERO, d_up)
            if d_lo is not None:
                s.assert_le(ZERO, t, d_lo)

    # -- the step -------------------------------------------------------
    def run(self) -> None:
        ins: Instr = self.prog.ir.instrs[self.tr.pc]
        op = ins.opcode
        tr, s = self.tr, self.s
        nxt = ins.succs[0] if ins.succs else None
        if op in ("halt", "fail"):
            raise Blocked("terminal")
        if op in ("jump", "ignore"):
            pass
        elif op == "assign":
            v = self.operand(ins.args[0])
            t = self.prog.ir.locals[ins.dst]
            if is_ptr(t) and not isinstance(v, tuple):
                v = (ZERO, ZERO)
            self.set_local(ins.dst, v)
        elif op == "binop":
            self.set_local(ins.dst, self.binop(ins))
        elif op == "unop":
            a = self.operand(ins.args[0])
            ct = ins.ctype
            ca = s.value(a)
            if ca is not None:
                v = -ca if ins.op == "-" else ~ca
                if ct.signed and not (ct.lo <= v <= ct.hi):
                    raise Blocked("signed overflow")
                self.set_local(ins.dst, s.const(ct.wrap(v)))
            elif ins.op == "-":
                lo, hi = s.bounds(a)
                if ct.signed and not self.no_signed_overflow(None if hi is None else -hi,
                                                             None if lo is None else -lo, ct):
                    s.assert_le(ZERO, a, -(ct.lo + 1))
                    lo, hi = s.bounds(a)
                t = s.fresh("n", (ct.lo, ct.hi))
                if lo is not None and hi is not None and ct.lo <= -hi and -lo <= ct.hi:
                    s.assert_le(t, ZERO, -lo)
                    s.assert_le(ZERO, t, hi)
                self.set_local(ins.dst, t)
            else:
                # ~a == -a - 1
                lo, hi = s.bounds(a)
                t = s.fresh("n", (ct.lo, ct.hi))
                if lo is not None and hi is not None:
                    s.assert_le(t, ZERO, -lo - 1)
                    s.assert_le(ZERO, t, hi + 1)
                self.set_local(ins.dst, t)
        elif op == "cast":
            a = self.operand(ins.args[0])
            ct = ins.ctype
            if isinstance(ct, IntType):
                if isinstance(a, tuple):
                    self.major_of(a[0])
                    a = ZERO
                self.set_local(ins.dst, self.wrap_linear(a, 0, ct))
            else:
                self.set_local(ins.dst, a if isinstance(a, tuple) else (ZERO, ZERO))
        elif op == "ptradd":
            p = self.operand(ins.args[0])
            k = self.operand(ins.args[1])
            ck = s.value(k)
            if ck is not None:
                off = ck if ins.op != "-" else -ck
                m = s.fresh("n")
                s.assert_eq_off(m, p[1], off)
            else:
                m = s.fresh("n")
                lo_m, hi_m = s.bounds(p[1])
                lo_k, hi_k = s.bounds(k)
                sgn = 1 if ins.op != "-" else -1
                if sgn == 1:
                    if lo_m == hi_m and lo_m is not None:
                        s.assert_eq_off(m, k, lo_m)
                    else:
                        self._relate_add(m, p[1], k)
                else:
                    if lo_k is not None:
                        s.assert_le(m, p[1], -lo_k)
                    if hi_k is not None:
                        s.assert_le(p[1], m, hi_k)
            self.set_local(ins.dst, (p[0], m))
        elif op == "ptrdiff":
            p = self.operand(ins.args[0])
            q = self.operand(ins.args[1])
            if self.major_of(p[0]) != self.major_of(q[0]):
                raise Blocked("pointer difference across regions")
            ct = ins.ctype
            t = s.fresh("n", (ct.lo, ct.hi))
            c = None
            up, lo = s.le(p[1], q[1]), s.le(q[1], p[1])
            if up is not None and lo is not None and up == -lo:
                c = up
            if c is not None:
                s.assert_eq_off(t, ZERO, c)
            else:
                self._relate_diff(t, p[1], q[1])
            self.set_local(ins.dst, t)
        elif op == "load":
            p = self.operand(ins.args[0])
            self.set_local(ins.dst, self.load(p, ins.field, ins.ctype))
        elif op == "store":
            p = self.operand(ins.args[0])
            v = self.operand(ins.args[1])
            if is_ptr(ins.ctype) and not isinstance(v, tuple):
                v = (ZERO, ZERO)
            self.store(p, ins.field, ins.ctype, v)
        elif op == "alloc":
            self.alloc(ins)
        elif op == "branch":
            a = self.operand(ins.args[0])
            b = self.operand(ins.args[1])
            if isinstance(a, tuple) or isinstance(b, tuple):
                a = a if isinstance(a, tuple) else (ZERO, ZERO)
                b = b if isinstance(b, tuple) else (ZERO, ZERO)
                taken = self.decide_ptr_cmp(ins.op, a, b)
            else:
                taken = self.decide_cmp(ins.op, a, b)
            nxt = ins.succs[0] if taken else ins.succs[1]
        elif op == "check":
            if ins.kind == "ptr":
                ok = self.region_check(self.operand(ins.args[0]))
            else:
                ok = self.overflow_check(ins)
            nxt = ins.succs[0] if ok else ins.succs[1]
        elif op == "nondet":
            self.nondet(ins)
        else:
            raise ValueError(op)
        tr.pc = nxt
        tr.forced = None

    def _relate_add(self, m: int, a: int, k: int) -> None:
        s = self.s
        lo_k, hi_k = s.bounds(k)
        lo_a, hi_a = s.bounds(a)
        if hi_k is not None:
            s.assert_le(m, a, hi_k)
        if lo_k is not None:
            s.assert_le(a, m, -lo_k)
        if hi_a is not None:
            s.assert_le(m, k, hi_a)
        if lo_a is not None:
            s.assert_le(k, m, -lo_a)

    def _relate_diff(self, t: int, a: int, b: int) -> None:
        """t = a - b without wrapping."""
        s = self.s
        d_up, d_lo = s.le(a, b), s.le(b, a)
        if d_up is not None:
            s.assert_le(t, ZERO, d_up)
        if d_lo is not None:
            s.assert_le(ZERO, t, d_lo)
        lo_b, hi_b = s.bounds(b)
        if lo_b is not None:
            s.assert_le(t, a, -lo_b)
        if hi_b is not None:
            s.assert_le(a, t, hi_b)

    def overflow_check(self, ins: Instr) -> bool:
        f = self.forced()
        if f in ("ok", "bad"):
            return f == "ok"
        ct: IntType = ins.ctype
        a, b = (self.operand(x) for x in ins.args)
        s = self.s
        cb, ca = s.value(b), s.value(a)
        if ins.op in ("+", "-") and (cb is not None or (ca is not None and ins.op == "+")):
            base, off = (a, cb if ins.op == "+" else -cb) if cb is not None else (b, ca)
            # in range iff ct.lo - off <= base <= ct.hi - off
            hi_ok = s.entails_le(base, ZERO, ct.hi - off)
            lo_ok = s.entails_le(ZERO, base, off - ct.lo)
            if hi_ok and lo_ok:
                return True
            if s.entails_le(ZERO, base, off - ct.hi - 1) or s.entails_le(base, ZERO, ct.lo - off - 1):
                return False
            self.need([[("le", base, ZERO, ct.hi - off), ("le", ZERO, base, off - ct.lo)],
                       [("le", ZERO, base, off - ct.hi - 1)], [("le", base, ZERO, ct.lo - off - 1)]])
        lo_a, hi_a = s.bounds(a)
        lo_b, hi_b = s.bounds(b)
        if None not in (lo_a, hi_a, lo_b, hi_b):
            from .concrete import arith
            vals = [arith(ins.op, x, y) for x in (lo_a, hi_a) for y in (lo_b, hi_b)]
            if ct.lo <= min(vals) and max(vals) <= ct.hi:
                return True
        if self.primary:
            self.need([[("force", "ok")], [("force", "bad")]])
        raise Blocked("undecided overflow")

    def nondet(self, ins: Instr) -> None:
        ct = ins.ctype
        comps = _slot_kinds(ct)
        h = self.h
        if self.primary:
            if is_ptr(ct):
                v = (self.s.fresh("n"), self.s.fresh("n"))
            else:
                v = self.s.fresh_typed(ct)
            if h.first is not None:
                vals = v if isinstance(v, tuple) else (v,)
                for comp, t in zip(comps, vals):
                    self.tr.env[("nd", ins.id, comp)] = t
        else:
            penv = h.traces[0].env
            vals = [penv.get(("nd", ins.id, comp)) for comp in comps]
            if any(x is None for x in vals):
                vals = [self.s.fresh_typed(ct) if not is_ptr(ct) else self.s.fresh("n") for _ in comps]
            v = tuple(vals) if is_ptr(ct) else vals[0]
        self.set_local(ins.dst, v)

    def alloc(self, ins: Instr) -> None:
        s, tr = self.s, self.tr
        M = self.prog.site_major[ins.id]
        maj = self.prog.majors[M]
        count = tr.allocs.get(ins.id, 0)
        tr.allocs[ins.id] = min(count + 1, 2)
        Mt = s.const(M)
        if count == 0:
            m = ZERO
            if maj.kind == "array":
                n = self.operand(ins.args[0])
                tr.env[("base", M)] = ZERO
                tr.env[("bound", M)] = n
        else:
            m = s.fresh("n")
            s.assert_le(s.const(maj.prefix), m, 0)
            if maj.kind == "array":
                tr.env.pop(("base", M), None)
                tr.env.pop(("bound", M), None)
        size = tr.env[("size",)]
        ns = s.fresh("n")
        s.assert_eq_off(ns, size, 1)
        tr.env[("size",)] = ns
        self.set_local(ins.dst, (Mt, m))


def _apply_actions(h: Herd, ti: int, actions) -> None:
    s = h.solver
    for act in actions:
        kind = act[0]
        if kind == "le":
            s.assert_le(act[1], act[2], act[3])
        elif kind == "dom":
            s.restrict(act[1], act[2])
        elif kind == "ne":
            s.assert_ne(act[1], act[2])
        elif kind == "force":
            h.traces[ti].forced = act[1]
        else:
            raise ValueError(kind)


# ---------------------------------------------------------------- operations


def can_fail(h: Herd) -> bool:
    return h.prog.ir.instrs[h.primary.pc].opcode == "fail"


def is_terminal(h: Herd, ti: int = 0) -> bool:
    return h.prog.ir.instrs[h.traces[ti].pc].opcode in ("halt", "fail")


def split(h: Herd, limit: int = 64) -> list[Herd]:
    """Partition ``h`` so the primary's next instruction is decided in each child."""
    out = []
    todo = [h]
    probes = 0
    while todo:
        probes += 1
        if probes > 8 * limit:
            raise RuntimeError("split does not converge")
        cur = todo.pop()
        if is_terminal(cur):
            out.append(cur)
            continue
        probe = cur.clone()
        try:
            Exec(probe, 0, True).run()
        except NeedSplit as ns:
            children = []
            # the probe only created terms and lazy slots before deciding, so it is a sound base
            for alt in ns.alternatives:
                child = probe.clone()
                try:
                    _apply_actions(child, 0, alt)
                except Inconsistent:
                    continue
                children.append(child)
            if len(out) + len(todo) + len(children) > limit:
                raise RuntimeError("split explosion")
            todo.extend(reversed(children))
            continue
        except (Blocked, Inconsistent):
            # no concrete successor: keep the herd; stepping it yields nothing
            pass
        out.append(cur)
    for c in out:
        c.invalidate()
    return out


def step_primary(h: Herd) -> Optional[Herd]:
    """Run the primary one instruction; None when it has no successor."""
    if is_terminal(h):
        return None
    n = h.clone()
    ins = n.prog.ir.instrs[n.primary.pc]
    ex = Exec(n, 0, True)
    try:
        ex.run()
    except (Blocked, Inconsistent):
        return None
    except NeedSplit:
        raise RuntimeError(f"primary step at {ins.id} is not decided; split first")
    n.last_instr = ins.id
    n.widen_point = False
    loop_event = n.prog.markers.get(ins.id)
    U = n.prog.cfg.unroll
    if ex.touched_summary:
        active = [lid for lid in n.counts]
        if active:
            n.touched = n.touched | {active[-1]}
    path = n.path + (n.primary.pc,)
    if loop_event is not None:
        kind, lp = loop_event
        if kind == "entrance":
            n.counts.pop(lp.loop_id, None)
            n.counts[lp.loop_id] = 0
            n.touched = n.touched - {lp.loop_id}
        elif kind == "iteration":
            c = min(n.counts.get(lp.loop_id, 0) + 1, U)
            n.counts[lp.loop_id] = c
            if c >= U or lp.loop_id in n.touched:
                path = _collapse(n.path, lp)
                n.widen_point = True
        elif kind == "end":
            n.counts.pop(lp.loop_id, None)
            n.touched = n.touched - {lp.loop_id}
    n.path = path
    n.invalidate()
    return n


def _collapse(path: tuple, lp) -> tuple:
    idx = None
    for i in range(len(path) - 1, -1, -1):
        if path[i] == lp.entrance:
            idx = i
            break
    if idx is None:
        return path + ("*", lp.header)
    return path[:idx + 1] + ("*", lp.header)


def step_scapegoat(h: Herd, i: int) -> Herd:
    """Advance trace i (1-based, > 1) one step, or drop it when the step is undecided."""
    if not (2 <= i <= h.arity):
        return h
    n = h.clone()
    ti = i - 1
    try:
        Exec(n, ti, False).run()
    except (NeedSplit, Blocked, Inconsistent):
        del n.traces[ti]
    n.invalidate()
    return n


def _advance_in_place(h: Herd, ti: int) -> bool:
    """Like step_scapegoat but mutating ``h``; False if the trace must be dropped."""
    saved_solver = h.solver.clone()
    saved = h.traces[ti].copy()
    try:
        Exec(h, ti, False).run()
        return True
    except (NeedSplit, Blocked, Inconsistent):
        h.solver = saved_solver
        h.traces[ti] = saved
        return False


def _size_option_ready(h: Herd, opt: ShrinkOption) -> bool:
    s, first, prog = h.solver, h.first, h.prog
    for kind, idx, detail in opt.parts:
        p = prog.ir.shape.params[idx]
        if kind == "del":
            n = first[("v", p.len_local)]
            if not s.entails_le(ZERO, n, -(detail + 1)):
                return False
        else:
            path, _ = detail
            M = _linked_ptr_slot(prog, idx, path, first)[0]
            if not s.entails_le(ZERO, M, -1):
                return False
    return True


def _linked_ptr_slot(prog: Program, idx: int, path: tuple, env: dict):
    """(major term, minor term, slot keys) of the pointer to the node at ``path``."""
    p = prog.ir.shape.params[idx]
    nodes = prog.param_layout[idx][1]
    if not path:
        keys = (("v", p.local, "M"), ("v", p.local, "m"))
    else:
        parent = nodes[path[:-1]]
        keys = (("c", parent, 0, path[-1], "M"), ("c", parent, 0, path[-1], "m"))
    return env[keys[0]], env[keys[1]], keys


def maybe_add_scapegoats(h: Herd, k: Optional[int] = None) -> Herd:
    """Add a scapegoat for each shrink option whose preconditions now hold."""
    if h.first is None or not h.prog.cfg.scapegoats:
        return h
    prog = h.prog
    ready = [o for o in prog.options if o.label not in h.added and _size_option_ready(h, o)]
    if not ready:
        return h
    n = h.clone()
    s = n.solver
    for opt in ready:
        env = dict(n.first)
        removed = 0
        for kind, idx, detail in opt.parts:
            p = prog.ir.shape.params[idx]
            if kind == "del":
                mid = prog.param_layout[idx][1]
                maj = prog.majors[mid]
                j = detail
                m0 = env[("v", p.ptr_local, "m")]
                m1 = s.fresh("n")
                s.assert_eq_off(m1, m0, 1)
                env[("v", p.ptr_local, "m")] = m1
                n0 = env[("v", p.len_local)]
                n1 = s.fresh_typed(p.len_type)
                s.assert_eq_off(n1, n0, -1)
                env[("v", p.len_local)] = n1
                b0 = env[("base", mid)]
                b1 = s.fresh("n")
                s.assert_eq_off(b1, b0, 1)
                env[("base", mid)] = b1
                for q in range(j, 0, -1):
                    for f, ft in maj.fields:
                        for comp in _slot_kinds(ft):
                            env[("c", mid, q, f, comp)] = n.first[("c", mid, q - 1, f, comp)]
                removed += 1
            else:
                path, fld = detail
                nodes = prog.param_layout[idx][1]
                node = nodes[path]
                _, _, keys = _linked_ptr_slot(prog, idx, path, env)
                env[keys[0]] = n.first[("c", node, 0, fld, "M")]
                env[keys[1]] = n.first[("c", node, 0, fld, "m")]
                removed += 1
        size0 = n.first[("size",)]
        sz = s.fresh("n")
        if opt.exact:
            s.assert_eq_off(sz, size0, -removed)
        else:
            s.assert_le(sz, size0, -removed)
        s.assert_le(ZERO, sz, 0)
        env[("size",)] = sz
        n.traces.append(Trace(prog.ir.entry, env, opt.label, {}, dict(n.first_sdom)))
        n.added = n.added | {opt.label}
    if len(n.added) >= len(prog.options):
        n.first = None
    n.invalidate()
    return n


def can_blame(h: Herd, i: int) -> bool:
    """Trace i (1-based) sits at the primary's failure and is provably smaller."""
    if not (2 <= i <= h.arity) or not can_fail(h):
        return False
    sg, pr = h.traces[i - 1], h.primary
    if sg.pc != pr.pc:
        return False
    return h.solver.entails_le(sg.env[("size",)], pr.env[("size",)], -1)


# ---------------------------------------------------------------- scapegoat stepping


def locals_match(h: Herd, ti: int, names) -> bool:
    s = h.solver
    pr, sg = h.primary.env, h.traces[ti].env
    ir = h.prog.ir
    for name in names:
        t = ir.locals[name]
        if is_ptr(t):
            for comp in ("M", "m"):
                a, b = pr.get(("v", name, comp)), sg.get(("v", name, comp))
                if a is None or b is None:
                    return False
                if comp == "M":
                    if not s.entails_eq(a, b):
                        return False
                elif not s.entails_eq(a, b):
                    da = s.domain(pr[("v", name, "M")])
                    if not (da is not None and da == {0}):
                        return False
        else:
            a, b = pr.get(("v", name)), sg.get(("v", name))
            if a is None or b is None:
                return False
            up, lo = s.le(b, a), s.le(a, b)
            if up is None or lo is None or up != -lo or up not in (-1, 0, 1):
                return False
    return True


def stepper(h: Herd, budget: int | None = None) -> tuple[Herd, dict]:
    """Advance scapegoats after a primary loop iteration, loop exit or failure."""
    stats = {"dropped": 0, "steps": 0}
    if h.arity == 1 or h.last_instr is None and not can_fail(h):
        return h, stats
    prog = h.prog
    ev = prog.markers.get(h.last_instr) if h.last_instr is not None else None
    if can_fail(h):
        names = ()
    elif ev is not None and ev[0] in ("iteration", "end"):
        lp = ev[1]
        names = tuple(sorted(v for v in lp.relevant if v in prog.live[h.primary.pc]))
    else:
        return h, stats
    target = h.primary.pc
    budget = budget or (4 * len(prog.ir.instrs) + 64)
    n = h.clone()
    keep = [n.traces[0]]
    ti = 1
    while ti < len(n.traces):
        ok = False
        visits = 0
        for _ in range(budget):
            tr = n.traces[ti]
            if tr.pc == target:
                if locals_match(n, ti, names):
                    ok = True
                    break
                visits += 1
                if visits > 2:
                    break
            if prog.ir.instrs[tr.pc].opcode in ("halt", "fail"):
                break
            if not _advance_in_place(n, ti):
                break
            stats["steps"] += 1
        if ok:
            ti += 1
        else:
            del n.traces[ti]
            stats["dropped"] += 1
    del keep
    n.invalidate()
    return n, stats


# ---------------------------------------------------------------- garbage collection


def _live_slots(h: Herd, tr: Trace) -> dict:
    prog = h.prog
    live = prog.live[tr.pc] if tr.pc < len(prog.live) else frozenset()
    out = {}
    for k, t in tr.env.items():
        if k[0] == "v" and k[1] not in live:
            continue
        out[k] = t
    return out


def collect(h: Herd) -> Herd:
    """Drop dead locals and solver terms no longer reachable from any slot (in place)."""
    for tr in h.traces:
        tr.env = _live_slots(h, tr)
    roots = set()
    for tr in h.traces:
        roots.update(tr.env.values())
    if h.first is not None:
        roots.update(h.first.values())
    s = h.solver
    live_classes = {s.find(t) for t in roots}
    keep = set(roots)
    changed = True
    while changed:
        changed = False
        for app in s.apps:
            if app.fn == "select":
                if s.find(app.args[0]) in live_classes:
                    for t in app.args + (app.res,):
                        if t not in keep:
                            keep.add(t)
                            live_classes.add(s.find(t))
                            changed = True
            elif app.fn == "store":
                if s.find(app.res) in live_classes:
                    for t in app.args:
                        if t not in keep:
                            keep.add(t)
                            live_classes.add(s.find(t))
                            changed = True
            elif app.res not in keep and all(s.find(x) in live_classes for x in app.args):
                # an arithmetic result over live operands still carries facts about them
                keep.add(app.res)
                live_classes.add(s.find(app.res))
                changed = True
    # keep one member per live class so congruence survives
    h.solver = s.restrict_to(keep)
    h.invalidate()
    return h


# ---------------------------------------------------------------- canonical facts


_APP_TAG = {"select": "sel", "store": "sto"}
_TAG_FN = {"sel": "select", "sto": "store"}


def _app_name(fn: str, argn: list) -> tuple:
    tag = _APP_TAG.get(fn)
    if tag is not None:
        return (tag,) + tuple(argn)
    return ("op", fn) + tuple(argn)


def _name_app(name) -> tuple[str, tuple]:
    """(function, argument names) of an application name."""
    if name[0] == "op":
        return name[1], name[2:]
    return _TAG_FN[name[0]], name[1:]


def _name_key(name) -> tuple:
    # major-address names last so that a shared constant is named by its integer use
    return (name[0] == "S" and name[-1] == "M", repr(name))


@dataclass
class Facts:
    le: dict  # (n1, n2) -> c
    aeq: frozenset  # pairs of array names known equal
    dom: dict  # name -> frozenset
    ranges: dict  # name -> (lo, hi)
    kinds: dict  # name -> "n" | "a"
    slot_names: dict  # term -> root name (for reference)
    majors: frozenset  # names of major components
    ne: frozenset = frozenset()  # pairs of names known to differ


def _slot_name(ti, first: bool, slot) -> tuple:
    return ("S", ti, "F" if first else "L") + tuple(slot)


def herd_names(h: Herd) -> tuple[dict, dict]:
    """Map solver terms to canonical names; returns (term -> root name, name -> (term, offset))."""
    s = h.solver
    names: dict[int, list] = {}
    for ti, tr in enumerate(h.traces):
        for slot, t in tr.env.items():
            names.setdefault(t, []).append(_slot_name(ti, False, slot))
    if h.first is not None:
        for slot, t in h.first.items():
            names.setdefault(t, []).append(_slot_name(0, True, slot))
    names.setdefault(ZERO, []).append(("Z",))
    root: dict[int, tuple] = {t: min(ns, key=_name_key) for t, ns in names.items()}
    root[ZERO] = ("Z",)
    offset_name: dict[int, tuple] = {}
    # hidden numeric terms at an exact offset from a named term
    for t in s.kind:
        if t in root or s.kind[t] != "n":
            continue
        best = None
        for u, c in s.up[t].items():
            if u in root and s.up[u].get(t) == -c:
                cand = (root[u], c)
                if best is None or _name_key(cand[0]) < _name_key(best[0]):
                    best = cand
        if best is not None:
            offset_name[t] = best
    # application results named structurally, to a fixpoint
    changed = True
    while changed:
        changed = False
        for app in s.apps:
            if app.res in root:
                continue
            argn = _app_args(app, root, offset_name)
            if argn is not None:
                root[app.res] = _app_name(app.fn, argn)
                changed = True
    resolve = {}
    for t, nm in root.items():
        resolve[nm] = (t, 0)
    for t, (nm, c) in offset_name.items():
        resolve[("+", nm, c)] = (t, 0)
    return root, resolve


def _app_args(app, root: dict, offset_name: dict) -> Optional[list]:
    argn = []
    for a in app.args:
        if a in root:
            argn.append(root[a])
        elif a in offset_name:
            argn.append(("+", offset_name[a][0], offset_name[a][1]))
        else:
            return None
    return argn


def _app_aliases(h: Herd, root: dict) -> list[tuple]:
    """(application name, root name) for applications whose result a slot already names."""
    s = h.solver
    offset_name = {}
    out = []
    for app in s.apps:
        nm = root.get(app.res)
        if nm is None or nm[0] in ("sel", "sto", "op"):
            continue
        argn = _app_args(app, root, offset_name)
        if argn is not None:
            out.append((_app_name(app.fn, argn), nm))
    return out


def facts(h: Herd) -> Facts:
    if h._facts is not None:
        return h._facts
    s = h.solver
    root, _ = herd_names(h)
    aliases: dict[int, list] = {}
    for ti, tr in enumerate(h.traces):
        for slot, t in tr.env.items():
            aliases.setdefault(t, []).append(_slot_name(ti, False, slot))
    if h.first is not None:
        for slot, t in h.first.items():
            aliases.setdefault(t, []).append(_slot_name(0, True, slot))
    le: dict = {}
    ranges: dict = {}
    kinds: dict = {}
    majors = set()
    atoms = [t for t in root if s.kind.get(t) == "n"]
    atom_set = set(atoms)
    for x in atoms:
        nx = root[x]
        kinds[nx] = "n"
        r = s.ranges.get(x)
        if r is not None:
            ranges[nx] = r
        for y, c in s.up[x].items():
            if y in atom_set:
                le[(nx, root[y])] = c
    # distinct terms merged by union-find have no edge between them
    by_class: dict[int, list] = {}
    for x in atoms:
        by_class.setdefault(s.find(x), []).append(root[x])
    for members in by_class.values():
        if len(members) > 1:
            rep = min(members, key=_name_key)
            for nm in members:
                if nm != rep:
                    le[(nm, rep)] = 0
                    le[(rep, nm)] = 0
    # slot aliases of the same term
    for t, ns in aliases.items():
        if t not in root:
            continue
        rn = root[t]
        for nm in ns:
            if nm == rn:
                continue
            kinds[nm] = s.kind[t]
            if s.kind[t] == "n":
                le[(nm, rn)] = 0
                le[(rn, nm)] = 0
                r = s.ranges.get(t)
                if r is not None:
                    ranges[nm] = r
    aeq = set()
    # applications whose result a slot holds survive rebuilding only as alias facts
    for an, rn in _app_aliases(h, root):
        fn, _ = _name_app(an)
        if fn == "store":
            kinds[an] = "a"
            aeq.add((rn, an))
        else:
            kinds[an] = "n"
            le[(an, rn)] = 0
            le[(rn, an)] = 0
    classes: dict[int, list] = {}
    for t, nm in root.items():
        if s.kind.get(t) == "a":
            kinds[nm] = "a"
            classes.setdefault(s.find(t), []).append(nm)
    for t, ns in aliases.items():
        if s.kind.get(t) == "a":
            for nm in ns:
                kinds[nm] = "a"
                classes.setdefault(s.find(t), []).append(nm)
    for members in classes.values():
        members = sorted(set(members), key=_name_key)
        for other in members[1:]:
            aeq.add((members[0], other))
    dom = {}
    for t, nm in root.items():
        if s.kind.get(t) == "n" and s.dom.get(s.find(t)) is not None:
            dom[nm] = s.domain(t)
    for t, ns in aliases.items():
        if s.kind.get(t) != "n":
            continue
        for nm in ns:
            is_major = nm[-1] == "M"
            if is_major:
                majors.add(nm)
            if is_major or s.dom.get(s.find(t)) is not None:
                d = s.domain(t)
                if d is not None:
                    dom[nm] = d
    # a major relates to integers only through its domain bounds, which dom already carries
    le = {k: c for k, c in le.items()
          if (k[0] in majors) == (k[1] in majors) or k[0] == ("Z",) or k[1] == ("Z",)}
    class_name: dict[int, tuple] = {}
    for x in atoms:
        r = s.find(x)
        if r not in class_name or _name_key(root[x]) < _name_key(class_name[r]):
            class_name[r] = root[x]
    ne = set()
    for p, q in s.ne:
        n1, n2 = class_name.get(s.find(p)), class_name.get(s.find(q))
        if n1 is not None and n2 is not None:
            ne.add(tuple(sorted((n1, n2), key=_name_key)))
    f = Facts(le, frozenset(aeq), dom, ranges, kinds, root, frozenset(majors), frozenset(ne))
    h._facts = f
    return f


class _Resolver:
    """Resolves canonical names against a herd for entailment checks."""

    def __init__(self, h: Herd):
        self.h = h
        self.s = h.solver
        self.env = {}
        for ti, tr in enumerate(h.traces):
            for slot, t in tr.env.items():
                self.env[_slot_name(ti, False, slot)] = t
        if h.first is not None:
            for slot, t in h.first.items():
                self.env[_slot_name(0, True, slot)] = t
        self.env[("Z",)] = ZERO
        self.cache = {}

    def term(self, name) -> Optional[tuple[int, int]]:
        """(term, offset) with value(name) == value(term) + offset."""
        if name in self.cache:
            return self.cache[name]
        out = None
        if name[0] in ("S", "Z"):
            t = self.env.get(name)
            out = None if t is None else (t, 0)
        elif name[0] == "+":
            base = self.term(name[1])
            out = None if base is None else (base[0], base[1] + name[2])
        elif name[0] in ("sel", "sto", "op"):
            fn, argnames = _name_app(name)
            args = []
            for a in argnames:
                r = self.term(a)
                if r is None:
                    break
                t, off = r
                if off != 0:
                    t = self._offset_term(t, off)
                    if t is None:
                        break
                args.append(t)
            else:
                res = self.s.find_app(fn, tuple(args))
                out = None if res is None else (res, 0)
        self.cache[name] = out
        return out

    def _offset_term(self, t: int, off: int) -> Optional[int]:
        s = self.s
        for u, c in s.up[t].items():
            if c == -off and s.up[u].get(t) == off:
                return u
        for u, c in s.down[t].items():
            if c == off and s.up[t].get(u) == -off:
                return u
        return None

    def bound(self, n1, n2) -> Optional[int]:
        a, b = self.term(n1), self.term(n2)
        if a is None or b is None:
            return None
        c = self.s.le(a[0], b[0])
        if c is None:
            return None
        return c + a[1] - b[1]

    def differ(self, n1, n2) -> bool:
        a, b = self.term(n1), self.term(n2)
        if a is None or b is None:
            return False
        if a[1] == b[1]:
            return self.s.entails_ne(a[0], b[0])
        c1, c2 = self.bound(n1, n2), self.bound(n2, n1)
        return (c1 is not None and c1 < 0) or (c2 is not None and c2 < 0)

    def same_array(self, n1, n2) -> bool:
        a, b = self.term(n1), self.term(n2)
        return a is not None and b is not None and self.s.find(a[0]) == self.s.find(b[0])

    def domain(self, nm) -> Optional[frozenset]:
        a = self.term(nm)
        if a is None:
            return None
        d = self.s.domain(a[0])
        if d is None:
            return None
        return frozenset(v + a[1] for v in d)


def more_precise(a: Herd, b: Herd) -> bool:
    """Every fact of b holds in a (so a's herds are among b's)."""
    if a.key() != b.key():
        return False
    fb = facts(b)
    r = _Resolver(a)
    for (n1, n2), c in fb.le.items():
        got = r.bound(n1, n2)
        if got is None or got > c:
            return False
    for n1, n2 in fb.aeq:
        if not r.same_array(n1, n2):
            return False
    for n1, n2 in fb.ne:
        if not r.differ(n1, n2):
            return False
    for nm, d in fb.dom.items():
        got = r.domain(nm)
        if got is None or not got <= d:
            return False
    return True


def _alias_classes(h: Herd) -> list[list]:
    """Slot names of each numeric union-find class with more than one member."""
    s = h.solver
    by_class: dict[int, list] = {s.find(ZERO): [("Z",)]}
    for ti, tr in enumerate(h.traces):
        for slot, t in tr.env.items():
            if s.kind.get(t) == "n":
                by_class.setdefault(s.find(t), []).append(_slot_name(ti, False, slot))
    if h.first is not None:
        for slot, t in h.first.items():
            if s.kind.get(t) == "n":
                by_class.setdefault(s.find(t), []).append(_slot_name(0, True, slot))
    return [sorted(ns, key=_name_key) for ns in by_class.values() if len(ns) > 1]


def widen(a: Herd, neighbors: list[Herd]) -> Herd:
    """Weaken the facts of ``a`` that its same-path neighbors do not all share."""
    prog = a.prog
    fa = facts(a)
    resolvers = [_Resolver(nb) for nb in neighbors]
    threshold = prog.cfg.major_threshold
    le = {}
    for (n1, n2), c in fa.le.items():
        shared = all(r.bound(n1, n2) == c for r in resolvers)
        if n1 in fa.majors or n2 in fa.majors:
            # address relations survive only when every neighbor agrees
            if shared and n1 != ("Z",) and n2 != ("Z",):
                le[(n1, n2)] = c
            continue
        if shared:
            le[(n1, n2)] = c
        elif c <= 0:
            # join of the signs, so the result covers a and every neighbor
            worst = c
            for r in resolvers:
                b = r.bound(n1, n2)
                if b is None:
                    worst = None
                    break
                worst = max(worst, b)
            if worst is not None and worst <= 0:
                le[(n1, n2)] = -1 if worst < 0 else 0
    # equalities between two aliases survive even when the neighbors name their class differently
    for members in _alias_classes(a):
        for i, n1 in enumerate(members):
            for n2 in members[i + 1:]:
                if (n1, n2) in le and (n2, n1) in le:
                    continue
                if all(r.bound(n1, n2) == 0 and r.bound(n2, n1) == 0 for r in resolvers):
                    le[(n1, n2)] = 0
                    le[(n2, n1)] = 0
    aeq = [p for p in fa.aeq if all(r.same_array(*p) for r in resolvers)]
    dom = {}
    for nm, d in fa.dom.items():
        u = set(d)
        for r in resolvers:
            got = r.domain(nm)
            if got is None:
                u = None
                break
            u |= got
        if u is not None and len(u) <= threshold:
            dom[nm] = frozenset(u)
    ne = frozenset(p for p in fa.ne if all(r.differ(*p) for r in resolvers))
    return rebuild(a, Facts(le, frozenset(aeq), dom, fa.ranges, fa.kinds, {}, fa.majors, ne))


def rebuild(a: Herd, f: Facts) -> Herd:
    """A herd with a's bookkeeping whose solver holds exactly the facts ``f``."""
    s = Solver()
    terms: dict = {("Z",): ZERO}
    r_old = _Resolver(a)

    def kind_of(nm):
        if nm in f.kinds:
            return f.kinds[nm]
        if nm[0] == "sto":
            return "a"
        if nm[0] == "S":
            t = r_old.env.get(nm)
            return a.solver.kind.get(t, "n") if t is not None else "n"
        return "n"

    def term_for(nm) -> int:
        if nm in terms:
            return terms[nm]
        if nm[0] == "+":
            base = term_for(nm[1])
            t = s.fresh("n")
            s.assert_eq_off(t, base, nm[2])
        elif nm[0] in ("sel", "sto", "op"):
            fn, argnames = _name_app(nm)
            args = tuple(term_for(x) for x in argnames)
            k = "a" if fn == "store" else "n"
            t = s.fresh(k, f.ranges.get(nm) if k == "n" else None)
            s.add_app(fn, args, t)
        else:
            k = kind_of(nm)
            t = s.fresh(k, f.ranges.get(nm) if k == "n" else None)
        terms[nm] = t
        return t

    n = a.clone()
    for ti, tr in enumerate(n.traces):
        tr.env = {slot: term_for(_slot_name(ti, False, slot)) for slot in tr.env}
    if n.first is not None:
        n.first = {slot: term_for(_slot_name(0, True, slot)) for slot in n.first}
    n.solver = s
    for (n1, n2), c in sorted(f.le.items(), key=lambda kv: (_name_key(kv[0][0]), _name_key(kv[0][1]))):
        s.assert_le(term_for(n1), term_for(n2), c)
    for n1, n2 in sorted(f.aeq, key=lambda p: (_name_key(p[0]), _name_key(p[1]))):
        s.assert_eq(term_for(n1), term_for(n2))
    for nm, d in f.dom.items():
        s.restrict(term_for(nm), d)
    for n1, n2 in sorted(f.ne, key=lambda p: (_name_key(p[0]), _name_key(p[1]))):
        s.assert_ne(term_for(n1), term_for(n2))
    # constants used by the slots are facts about zero and are rebuilt above
    n.invalidate()
    return n


# ---------------------------------------------------------------- display


def render_herd(h: Herd) -> str:
    """Per-trace listing of the last-state constraints, one trace per block."""
    f = facts(h)
    ir = h.prog.ir
    lines = []
    for ti, tr in enumerate(h.traces):
        title = "primary" if ti == 0 else f"scapegoat {tr.origin}"
        lines.append(f"h[{ti + 1}] ({title}) pc = {tr.pc} [{ir.instrs[tr.pc].opcode}]")
        mine = [(k, c) for k, c in f.le.items() if k[0][:2] == ("S", ti) or k[1][:2] == ("S", ti)]
        for (n1, n2), c in sorted(mine, key=lambda kv: repr(kv[0]))[:80]:
            lines.append(f"    {_fmt(n1)} - {_fmt(n2)} <= {c}")
    return "\n".join(lines)


def _fmt(nm) -> str:
    if nm[0] == "Z":
        return "0"
    if nm[0] == "S":
        ti, st = nm[1], nm[2]
        slot = nm[3:]
        prefix = f"h[{ti + 1}]{'.first' if st == 'F' else ''}"
        if slot[0] == "v":
            return f"{prefix}({slot[1]}{'.' + slot[2] if len(slot) > 2 else ''})"
        return f"{prefix}({':'.join(str(x) for x in slot)})"
    if nm[0] == "+":
        return f"({_fmt(nm[1])}{nm[2]:+d})"
    return f"{nm[0]}({', '.join(_fmt(x) for x in nm[1:])})"
