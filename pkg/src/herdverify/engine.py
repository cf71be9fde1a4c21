"""Worklist fixpoint over herds, with size-bound retries and worklist partitioning."""

from __future__ import annotations

import os
import time
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from . import domain as D
from .ir import InputShape, ProgramIR


@dataclass(frozen=True)
class EngineConfig:
    mode: str = "descent"  # "descent" | "classic"
    unroll: int = 2
    size_bound: int = 1
    max_retries: int = 1
    prefix: int = 2
    workers: int = 1
    timeout: float = 300.0
    overflow_checks: bool = False
    major_threshold: int = 8
    max_iterations: int = 200_000
    keep_seen: bool = False

    def __post_init__(self):
        if self.mode not in ("descent", "classic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.size_bound < 1 or self.unroll < 1 or self.workers < 1 or self.prefix < 1:
            raise ValueError("size bound, unroll, prefix and workers must be at least 1")

    def domain(self) -> D.DomainConfig:
        return D.DomainConfig(unroll=self.unroll, prefix=max(self.prefix, self.size_bound),
                              major_threshold=self.major_threshold, size_bound=self.size_bound,
                              scapegoats=self.mode == "descent")


@dataclass
class Stats:
    herds: int = 0
    widenings: int = 0
    added: int = 0
    dropped: int = 0
    blamed: int = 0
    max_arity: int = 1
    seen: int = 0
    attempts: int = 1
    seconds: float = 0.0
    timeout: bool = False

    def merge(self, other: "Stats") -> None:
        self.herds += other.herds
        self.widenings += other.widenings
        self.added += other.added
        self.dropped += other.dropped
        self.blamed += other.blamed
        self.max_arity = max(self.max_arity, other.max_arity)
        self.seen += other.seen
        self.timeout = self.timeout or other.timeout

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Verdict:
    safe: bool
    stats: Stats
    reason: str = ""
    seen: Optional[list] = None
    witness: Optional[object] = None  # herd that could not be blamed

    @property
    def label(self) -> str:
        return "SAFE" if self.safe else "UNKNOWN"


# ---------------------------------------------------------------- worklist


class Worklist:
    """LIFO within an abstract path, FIFO across paths."""

    def __init__(self):
        self.groups: OrderedDict[tuple, list] = OrderedDict()
        self.by_key: dict[tuple, list] = {}

    def __len__(self) -> int:
        return sum(len(g) for g in self.groups.values())

    def __bool__(self) -> bool:
        return bool(self.groups)

    def push(self, h: D.Herd) -> None:
        self.groups.setdefault(h.path, []).append(h)
        self.by_key.setdefault(h.key(), []).append(h)

    def pop(self) -> D.Herd:
        path, group = next(iter(self.groups.items()))
        h = group.pop()
        if not group:
            del self.groups[path]
        self._unindex(h)
        return h

    def remove(self, h: D.Herd) -> None:
        group = self.groups[h.path]
        group.remove(h)
        if not group:
            del self.groups[h.path]
        self._unindex(h)

    def _unindex(self, h: D.Herd) -> None:
        lst = self.by_key[h.key()]
        for i, x in enumerate(lst):
            if x is h:
                del lst[i]
                break
        if not lst:
            del self.by_key[h.key()]

    def entries(self) -> list:
        return [h for g in self.groups.values() for h in g]


class NotSplittable(Exception):
    pass


def partition_worklist(w: list) -> tuple[list, list]:
    """Split herds into two groups whose paths diverge outside any active loop.

    Paths only grow or collapse back to an active loop's entrance, so with no
    active loops two groups that differ at the first divergence point can never
    meet as widening neighbors again.
    """
    if len(w) < 2:
        raise NotSplittable("fewer than two entries")
    if any(h.counts for h in w):
        raise NotSplittable("an entry is inside a loop")
    paths = [h.path for h in w]
    n = 0
    while all(len(p) > n for p in paths) and len({p[n] for p in paths}) == 1:
        n += 1
    if any(len(p) <= n for p in paths):
        raise NotSplittable("a path is a prefix of another")
    branches: OrderedDict = OrderedDict()
    for h in w:
        branches.setdefault(h.path[n], []).append(h)
    if len(branches) < 2:
        raise NotSplittable("no divergence")
    groups = list(branches.values())
    total = len(w)
    left, count = [], 0
    for g in groups[:-1]:
        if left and count + len(g) > total / 2:
            break
        left.extend(g)
        count += len(g)
    right = [h for h in w if not any(h is x for x in left)]
    return left, right


# ---------------------------------------------------------------- the fixpoint


class _Budget(Exception):
    pass


def _explore(prog: D.Program, work: list, seen: list, cfg: EngineConfig, deadline: float,
             stats: Stats, split_at: int = 0) -> tuple[Optional[D.Herd], list, list]:
    """Run the worklist to exhaustion.

    Returns (unblamed herd or None, seen, leftover partitions).  When
    ``split_at`` is positive and the worklist reaches that size with a valid
    partition, the loop stops early and returns the partitions.
    """
    wl = Worklist()
    for h in work:
        wl.push(h)
    seen_by_key: dict[tuple, list] = {}
    for h in seen:
        seen_by_key.setdefault(h.key(), []).append(h)
    scapegoats = cfg.mode == "descent"
    while wl:
        if stats.herds >= cfg.max_iterations or time.monotonic() > deadline:
            stats.timeout = True
            raise _Budget()
        if split_at and len(wl) >= split_at:
            try:
                left, right = partition_worklist(wl.entries())
                return None, seen, [left, right]
            except NotSplittable:
                pass
        a = wl.pop()
        stats.herds += 1
        stats.max_arity = max(stats.max_arity, a.arity)
        seen.append(a)
        seen_by_key.setdefault(a.key(), []).append(a)
        if D.can_fail(a):
            if not any(D.can_blame(a, i) for i in range(2, a.arity + 1)):
                return a, seen, []
            stats.blamed += 1
            continue
        b = D.step_primary(a)
        if b is None:
            continue
        for c in D.split(b):
            if scapegoats:
                before = c.arity
                c = D.maybe_add_scapegoats(c, cfg.size_bound)
                stats.added += c.arity - before
                c, st = D.stepper(c)
                stats.dropped += st["dropped"]
            D.collect(c)
            if c.widen_point:
                key = c.key()
                neighbors = seen_by_key.get(key, []) + wl.by_key.get(key, [])
                c = D.widen(c, neighbors)
                stats.widenings += 1
                # widening may forget the facts that decided the next instruction
                batch = D.split(c)
            else:
                batch = [c]
            for d in batch:
                _insert(d, wl, seen_by_key)
    return None, seen, []


def _insert(c: D.Herd, wl: Worklist, seen_by_key: dict) -> None:
    """Add c unless a seen or pending herd covers it; drop pending herds c covers."""
    key = c.key()
    if any(D.more_precise(c, x) for x in seen_by_key.get(key, [])):
        return
    if any(D.more_precise(c, x) for x in wl.by_key.get(key, [])):
        return
    for x in list(wl.by_key.get(key, [])):
        if D.more_precise(x, c):
            wl.remove(x)
    wl.push(c)


def _run_partition(args) -> tuple[bool, Stats, str]:
    prog, work, seen, cfg, deadline = args
    stats = Stats()
    try:
        bad, _, _ = _explore(prog, work, seen, cfg, deadline, stats)
    except _Budget:
        return False, stats, "budget exhausted"
    except Exception as e:  # internal errors never yield Safe
        return False, stats, f"internal error: {type(e).__name__}: {e}"
    stats.seen = len(seen)
    if bad is not None:
        return False, stats, f"possible failure at instruction {bad.primary.pc}"
    return True, stats, ""


def verify(ir: ProgramIR, shape: Optional[InputShape] = None, cfg: EngineConfig = EngineConfig()) -> Verdict:
    """Safe when every herd that can fail has a smaller scapegoat sharing its failure."""
    start = time.monotonic()
    deadline = start + cfg.timeout
    stats = Stats()
    if shape is not None and shape != ir.shape:
        ir = replace(ir, shape=shape)
    try:
        prog = D.Program(ir, cfg.domain())
        init = D.split(D.initial_herd(prog))
        if cfg.mode == "descent":
            init = [D.maybe_add_scapegoats(h, cfg.size_bound) for h in init]
        seen: list = []
        if cfg.workers > 1:
            bad, seen, parts = _explore(prog, init, seen, cfg, deadline, stats, split_at=2)
            if bad is None and parts:
                parts = _refine(parts, cfg.workers)
                jobs = [(prog, part, seen, cfg, deadline) for part in parts]
                with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                    results = list(pool.map(_run_partition, jobs))
                stats.seen = len(seen)
                reasons = []
                for ok, st, why in results:
                    stats.merge(st)
                    if not ok:
                        reasons.append(why)
                stats.seconds = time.monotonic() - start
                if reasons:
                    return Verdict(False, stats, reasons[0])
                return Verdict(True, stats)
        else:
            bad, seen, _ = _explore(prog, init, seen, cfg, deadline, stats)
    except _Budget:
        stats.seconds = time.monotonic() - start
        return Verdict(False, stats, "budget exhausted")
    except Exception as e:  # internal errors never yield Safe
        if os.environ.get("HERDVERIFY_DEBUG"):
            raise
        stats.seconds = time.monotonic() - start
        return Verdict(False, stats, f"internal error: {type(e).__name__}: {e}")
    stats.seconds = time.monotonic() - start
    stats.seen = len(seen)
    kept = seen if cfg.keep_seen else None
    if bad is not None:
        return Verdict(False, stats, f"possible failure at instruction {bad.primary.pc}", kept, bad)
    return Verdict(True, stats, "", kept)


def _refine(parts: list, workers: int) -> list:
    parts = [p for p in parts if p]
    while len(parts) < workers:
        parts.sort(key=len, reverse=True)
        try:
            a, b = partition_worklist(parts[0])
        except NotSplittable:
            break
        parts = [a, b] + parts[1:]
    return parts


def verify_with_retry(ir: ProgramIR, shape: Optional[InputShape] = None, cfg: EngineConfig = EngineConfig()) -> Verdict:
    """Try size bounds k, k+1, ... until one attempt is Safe or the retries run out."""
    start = time.monotonic()
    total = Stats(attempts=0)
    last = None
    for extra in range(cfg.max_retries + 1):
        remaining = cfg.timeout - (time.monotonic() - start)
        if remaining <= 0:
            break
        attempt = replace(cfg, size_bound=cfg.size_bound + extra, timeout=remaining)
        last = verify(ir, shape, attempt)
        total.merge(last.stats)
        total.attempts += 1
        if last.safe:
            break
        if cfg.mode == "classic":
            break
    total.seconds = time.monotonic() - start
    if last is None:
        return Verdict(False, total, "budget exhausted")
    return Verdict(last.safe, total, last.reason, last.seen, last.witness)


def stepper_heuristic(a: D.Herd) -> D.Herd:
    return D.stepper(a)[0]
