"""Integer difference logic with equality and store/select congruence.

Facts have the form ``x - y <= c`` over integer terms.  The closure is kept
complete: after every assertion ``up[x][y]`` is the tightest derivable bound.
Term 0 is the constant zero, so ``x <= c`` is ``x - 0 <= c``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .ir import IntType

ZERO = 0


class Inconsistent(Exception):
    """The asserted facts have no model."""


@dataclass(frozen=True)
class App:
    fn: str  # "select" or "store"
    args: tuple[int, ...]
    res: int


class Solver:
    __slots__ = ("up", "down", "parent", "kind", "apps", "dom", "ranges", "next_id", "consts", "pending", "ne")

    def __init__(self) -> None:
        self.up: dict[int, dict[int, int]] = {ZERO: {}}
        self.down: dict[int, dict[int, int]] = {ZERO: {}}
        self.parent: dict[int, int] = {ZERO: ZERO}
        self.kind: dict[int, str] = {ZERO: "n"}
        self.apps: list[App] = []
        self.dom: dict[int, frozenset] = {}
        self.ranges: dict[int, tuple[int, int]] = {}
        self.next_id = 1
        self.consts: dict[int, int] = {0: ZERO}
        self.pending: list[tuple[int, int]] = []
        self.ne: list[tuple[int, int]] = []

    # ------------------------------------------------------------ basics
    def clone(self) -> "Solver":
        s = Solver.__new__(Solver)
        s.up = {k: dict(v) for k, v in self.up.items()}
        s.down = {k: dict(v) for k, v in self.down.items()}
        s.parent = dict(self.parent)
        s.kind = dict(self.kind)
        s.apps = list(self.apps)
        s.dom = dict(self.dom)
        s.ranges = dict(self.ranges)
        s.next_id = self.next_id
        s.consts = dict(self.consts)
        s.pending = []
        s.ne = list(self.ne)
        return s

    def fresh(self, kind: str = "n", rng: tuple[int, int] | None = None) -> int:
        t = self.next_id
        self.next_id += 1
        self.kind[t] = kind
        self.parent[t] = t
        if kind == "n":
            self.up[t] = {}
            self.down[t] = {}
            if rng is not None:
                self.ranges[t] = rng
        return t

    def fresh_typed(self, ctype) -> int:
        if isinstance(ctype, IntType):
            return self.fresh("n", (ctype.lo, ctype.hi))
        return self.fresh("n")

    def const(self, c: int) -> int:
        t = self.consts.get(c)
        if t is not None and t in self.kind:
            return t
        t = self.fresh("n")
        self.assert_eq_off(t, ZERO, c)
        self.consts[c] = t
        return t

    def terms(self) -> list[int]:
        return list(self.kind)

    def find(self, x: int) -> int:
        p = self.parent
        root = x
        while p[root] != root:
            root = p[root]
        while p[x] != root:
            p[x], x = root, p[x]
        return root

    # ------------------------------------------------------------ queries
    def rng(self, x: int) -> tuple[Optional[int], Optional[int]]:
        r = self.ranges.get(x)
        return (r[0], r[1]) if r else (None, None)

    def le(self, x: int, y: int) -> Optional[int]:
        """Tightest known c with x - y <= c, or None when unbounded."""
        if x == y or self.find(x) == self.find(y):
            return 0
        best = self.up[x].get(y)
        hx = self.upper(x, use_closure=(y != ZERO))
        ly = self.lower(y, use_closure=(x != ZERO))
        if hx is not None and ly is not None:
            c = hx - ly
            if best is None or c < best:
                best = c
        return best

    def _interval(self, x: int) -> tuple[Optional[int], Optional[int]]:
        """Closure and type-range bounds, ignoring the finite domain."""
        if x == ZERO:
            return 0, 0
        u = self.up[x].get(ZERO)
        d = self.up[ZERO].get(x)
        lo, hi = (None if d is None else -d), u
        r = self.ranges.get(x)
        if r is not None:
            lo = r[0] if lo is None else max(lo, r[0])
            hi = r[1] if hi is None else min(hi, r[1])
        return lo, hi

    def _live_domain(self, x: int) -> Optional[frozenset]:
        d = self.dom.get(self.find(x))
        if not d:
            return None
        lo, hi = self._interval(x)
        live = frozenset(v for v in d if (lo is None or v >= lo) and (hi is None or v <= hi))
        return live or d

    def upper(self, x: int, use_closure: bool = True) -> Optional[int]:
        vals = []
        if use_closure:
            u = self.up[x].get(ZERO) if x != ZERO else 0
            if u is not None:
                vals.append(u)
        r = self.ranges.get(x)
        if r is not None:
            vals.append(r[1])
        d = self._live_domain(x)
        if d:
            vals.append(max(d))
        return min(vals) if vals else None

    def lower(self, x: int, use_closure: bool = True) -> Optional[int]:
        vals = []
        if use_closure:
            u = self.up[ZERO].get(x) if x != ZERO else 0
            if u is not None:
                vals.append(-u)
        r = self.ranges.get(x)
        if r is not None:
            vals.append(r[0])
        d = self._live_domain(x)
        if d:
            vals.append(min(d))
        return max(vals) if vals else None

    def bounds(self, x: int) -> tuple[Optional[int], Optional[int]]:
        return self.lower(x), self.upper(x)

    def value(self, x: int) -> Optional[int]:
        lo, hi = self.bounds(x)
        if lo is not None and lo == hi:
            return lo
        return None

    def entails_le(self, x: int, y: int, c: int) -> bool:
        b = self.le(x, y)
        return b is not None and b <= c

    def entails_eq(self, x: int, y: int) -> bool:
        if self.find(x) == self.find(y):
            return True
        if self.kind[x] != "n" or self.kind[y] != "n":
            return False
        return self.entails_le(x, y, 0) and self.entails_le(y, x, 0)

    def entails_ne(self, x: int, y: int) -> bool:
        if self.kind[x] != "n" or self.kind[y] != "n":
            return False
        if self.entails_le(x, y, -1) or self.entails_le(y, x, -1):
            return True
        dx, dy = self.domain(x), self.domain(y)
        if dx is not None and dy is not None and not (dx & dy):
            return True
        for a, b in self.ne:
            # x - a == y - b (or x - b == y - a) carries a != b over to x != y
            for p, q in ((a, b), (b, a)):
                d = self._exact_diff(x, p)
                if d is not None and d == self._exact_diff(y, q):
                    return True
        return False

    def _exact_diff(self, x: int, y: int) -> Optional[int]:
        if self.find(x) == self.find(y):
            return 0
        c = self.up[x].get(y)
        if c is not None and self.up[y].get(x) == -c:
            return c
        return None

    def domain(self, x: int) -> Optional[frozenset]:
        d = self.dom.get(self.find(x))
        if d is None:
            v = self.value(x)
            return frozenset([v]) if v is not None else None
        lo, hi = self.lower(x), self.upper(x)
        return frozenset(v for v in d if (lo is None or v >= lo) and (hi is None or v <= hi))

    def entails(self, fact) -> bool:
        """Query a fact tuple: ("le", x, y, c) | ("eq", x, y) | ("ne", x, y)."""
        kind = fact[0]
        if kind == "le":
            return self.entails_le(fact[1], fact[2], fact[3])
        if kind == "eq":
            return self.entails_eq(fact[1], fact[2])
        if kind == "ne":
            return self.entails_ne(fact[1], fact[2])
        raise ValueError(kind)

    # ------------------------------------------------------------ assertions
    def assert_le(self, x: int, y: int, c: int) -> None:
        """Assert x - y <= c."""
        self._add_le(x, y, c)
        self._flush()
        self._settle_ne()

    def assert_eq_off(self, x: int, y: int, c: int = 0) -> None:
        """Assert x - y == c."""
        self._add_le(x, y, c)
        self._add_le(y, x, -c)
        self._flush()
        self._settle_ne()

    def _settle_ne(self) -> None:
        """Turn disequalities against a known value into bound or domain facts where exact."""
        for x, y in list(self.ne):
            if self.find(x) == self.find(y):
                raise Inconsistent()
            if self.value(x) is not None or self.value(y) is not None:
                self._refine_ne(x, y)

    def assert_eq(self, x: int, y: int) -> None:
        if self.kind[x] == "n" and self.kind[y] == "n":
            self.assert_eq_off(x, y, 0)
        else:
            self._union(x, y)
            self._flush()

    def assert_ne(self, x: int, y: int) -> bool:
        """Assert x != y, tightening a bound or domain where that expresses it exactly."""
        if self.entails_ne(x, y):
            return True
        if self.entails_eq(x, y):
            raise Inconsistent()
        if self._refine_ne(x, y):
            return True
        self.ne.append((x, y))
        return True

    def _refine_ne(self, x: int, y: int) -> bool:
        cy = self.value(y)
        cx = self.value(x)
        if cy is None and cx is not None:
            x, y, cx, cy = y, x, cy, cx
        if cy is not None:
            d = self.domain(x)
            if d is not None:
                if cy in d:
                    self.restrict(x, d - {cy})
                return True
            lo, hi = self.bounds(x)
            if lo == cy:
                self.assert_le(ZERO, x, -(cy + 1))
                return True
            if hi == cy:
                self.assert_le(x, ZERO, cy - 1)
                return True
        return False

    def restrict(self, x: int, values: Iterable[int]) -> None:
        """Intersect the finite domain of x with ``values``."""
        r = self.find(x)
        vals = frozenset(values)
        cur = self.domain(x)
        if cur is not None:
            vals &= cur
        if not vals:
            raise Inconsistent()
        self.dom[r] = vals
        self._add_le(x, ZERO, max(vals))
        self._add_le(ZERO, x, -min(vals))
        self._flush()
        self._settle_ne()

    def _add_le(self, x: int, y: int, c: int) -> None:
        if x == y:
            if c < 0:
                raise Inconsistent()
            return
        up, down = self.up, self.down
        cur = up[x].get(y)
        if cur is not None and cur <= c:
            return
        back = up[y].get(x)
        if back is not None and back + c < 0:
            raise Inconsistent()
        # type ranges also bound the difference; a bound below the range gap is a conflict
        hy, lx = self.rng(y)[1], self.rng(x)[0]
        if hy is not None and lx is not None and lx - hy > c:
            raise Inconsistent()
        A = [(x, 0)] + list(down[x].items())
        B = [(y, 0)] + list(up[y].items())
        for a, ca in A:
            upa = up[a]
            base = ca + c
            for b, cb in B:
                nc = base + cb
                if a == b:
                    if nc < 0:
                        raise Inconsistent()
                    continue
                old = upa.get(b)
                if old is None or nc < old:
                    upa[b] = nc
                    down[b][a] = nc
                    rev = up[b].get(a)
                    if rev is not None:
                        if rev + nc < 0:
                            raise Inconsistent()
                        if nc == 0 and rev == 0:
                            self.pending.append((a, b))
                    ra = self.ranges.get(a)
                    rb = self.ranges.get(b)
                    if ra and rb and ra[0] - rb[1] > nc:
                        raise Inconsistent()
                    if b == ZERO and ra and nc < ra[0]:
                        raise Inconsistent()
                    if a == ZERO and rb and -nc > rb[1]:
                        raise Inconsistent()

    def _union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if rb < ra:
            ra, rb = rb, ra
        for p, q in self.ne:
            if {self.find(p), self.find(q)} == {ra, rb}:
                raise Inconsistent()
        self.parent[rb] = ra
        da, db = self.dom.pop(ra, None), self.dom.pop(rb, None)
        if da is not None or db is not None:
            d = da if db is None else db if da is None else da & db
            if not d:
                raise Inconsistent()
            self.dom[ra] = d
        return True

    def _flush(self) -> None:
        """Apply queued equalities, then close under congruence."""
        while True:
            changed = False
            while self.pending:
                a, b = self.pending.pop()
                if self._union(a, b):
                    changed = True
            if not self.apps:
                return
            if not changed and not self._congruence_dirty():
                return
            if not self._congruence():
                if not self.pending:
                    return

    def _congruence_dirty(self) -> bool:
        return True

    def _congruence(self) -> bool:
        """One congruence pass; returns True if new equalities were found."""
        table: dict[tuple, int] = {}
        found = False
        for app in self.apps:
            sig = (app.fn,) + tuple(self.find(a) for a in app.args)
            other = table.get(sig)
            if other is None:
                table[sig] = app.res
                continue
            if self.find(other) != self.find(app.res):
                found = True
                if self.kind[app.res] == "n":
                    self._add_le(app.res, other, 0)
                    self._add_le(other, app.res, 0)
                    self._union(app.res, other)
                else:
                    self._union(app.res, other)
        return found

    # ------------------------------------------------------------ arrays
    def add_app(self, fn: str, args: tuple[int, ...], res: int) -> None:
        self.apps.append(App(fn, tuple(args), res))
        self._flush()

    def find_app(self, fn: str, args: tuple[int, ...]) -> Optional[int]:
        sig = tuple(self.find(a) for a in args)
        for app in self.apps:
            if app.fn == fn and tuple(self.find(a) for a in app.args) == sig:
                return app.res
        return None

    def store_defs(self, arr: int) -> list[App]:
        r = self.find(arr)
        return [a for a in self.apps if a.fn == "store" and self.find(a.res) == r]

    # ------------------------------------------------------------ projection
    def restrict_to(self, keep: Iterable[int]) -> "Solver":
        """A solver over only ``keep`` (plus zero) with every fact among them retained."""
        keep = set(keep)
        keep.add(ZERO)
        s = Solver.__new__(Solver)
        s.up = {k: {j: c for j, c in self.up[k].items() if j in keep} for k in keep if k in self.up}
        s.down = {k: {j: c for j, c in self.down[k].items() if j in keep} for k in keep if k in self.down}
        s.kind = {k: self.kind[k] for k in keep}
        classes: dict[int, list[int]] = {}
        for k in sorted(keep):
            classes.setdefault(self.find(k), []).append(k)
        s.parent = {}
        rep_of: dict[int, int] = {}
        for old_root, members in classes.items():
            new_root = members[0]
            rep_of[old_root] = new_root
            for m in members:
                s.parent[m] = new_root
        s.dom = {}
        for old_root, d in self.dom.items():
            if old_root in rep_of:
                s.dom[rep_of[old_root]] = d
        apps = []
        seen = set()
        for app in self.apps:
            args = []
            ok = True
            for a in app.args + (app.res,):
                r = rep_of.get(self.find(a))
                if r is None:
                    ok = False
                    break
                args.append(a if a in keep else r)
            if ok:
                new = App(app.fn, tuple(args[:-1]), args[-1])
                if new not in seen:
                    seen.add(new)
                    apps.append(new)
        s.apps = apps
        s.ranges = {k: v for k, v in self.ranges.items() if k in keep}
        s.next_id = self.next_id
        s.consts = {c: t for c, t in self.consts.items() if t in keep}
        s.pending = []
        s.ne = []
        for p, q in self.ne:
            rp, rq = rep_of.get(self.find(p)), rep_of.get(self.find(q))
            if rp is not None and rq is not None:
                s.ne.append((p if p in keep else rp, q if q in keep else rq))
        return s

    def dump(self) -> str:
        lines = []
        for x in sorted(self.up):
            for y, c in sorted(self.up[x].items()):
                lines.append(f"t{x} - t{y} <= {c}")
        classes: dict[int, list[int]] = {}
        for t in self.parent:
            classes.setdefault(self.find(t), []).append(t)
        for root, members in sorted(classes.items()):
            if len(members) > 1:
                lines.append("class " + " = ".join(f"t{m}" for m in sorted(members)))
        for root, d in sorted(self.dom.items()):
            lines.append(f"t{root} in {{{', '.join(map(str, sorted(d)))}}}")
        for app in self.apps:
            lines.append(f"t{app.res} = {app.fn}({', '.join(f't{a}' for a in app.args)})")
        return "\n".join(lines)


# ------------------------------------------------------------ module API

def assert_fact(s: Solver, fact) -> Solver:
    """Functional assertion on a copy; raises Inconsistent.

    Facts: ("le", x, y, c), ("eq", x, y), ("ne", x, y), ("app", fn, args, res).
    """
    s = s.clone()
    kind = fact[0]
    if kind == "le":
        s.assert_le(fact[1], fact[2], fact[3])
    elif kind == "eq":
        s.assert_eq(fact[1], fact[2])
    elif kind == "ne":
        s.assert_ne(fact[1], fact[2])
    elif kind == "app":
        s.add_app(fact[1], tuple(fact[2]), fact[3])
    else:
        raise ValueError(kind)
    return s


def entails(s: Solver, fact) -> bool:
    return s.entails(fact)


def apply_width_semantics(s: Solver, base: int, offset: int, ctype: IntType) -> int:
    """Term for the C value of ``base + offset`` converted to ``ctype``.

    When the mathematical value provably fits, the result is related exactly.
    When it provably wraps once in either direction, the exact shifted relation
    is used.  Otherwise a fresh term limited to the type range is returned.
    """
    lo_t, hi_t = ctype.lo, ctype.hi
    width = 1 << ctype.bits
    lo, hi = s.bounds(base)
    lo = None if lo is None else lo + offset
    hi = None if hi is None else hi + offset
    shift = None
    if lo is not None and hi is not None:
        if lo_t <= lo and hi <= hi_t:
            shift = 0
        elif lo > hi_t and hi - width <= hi_t and lo - width >= lo_t:
            shift = -width
        elif hi < lo_t and lo + width >= lo_t and hi + width <= hi_t:
            shift = width
        elif hi - lo < width:
            # a single window of width 2^w: exact modulo result
            k = (lo - lo_t) // width
            if (hi - lo_t) // width == k:
                shift = -k * width
    if shift is None:
        return s.fresh("n", (lo_t, hi_t))
    if shift == 0 and offset == 0 and s.ranges.get(base) == (lo_t, hi_t):
        return base
    t = s.fresh("n", (lo_t, hi_t))
    s.assert_eq_off(t, base, offset + shift)
    return t
