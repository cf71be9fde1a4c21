"""Acceptance criteria: each test prints one PASS/FAIL line and asserts the same condition."""
import random
import time

import pytest

from herdverify.concrete import FailingTraceWitness, enumerate_reachable
from herdverify.engine import EngineConfig, verify_with_retry

from conftest import CORPUS_DIR, corpus_entries, load, mutant_entries, run
from test_domain import check_widening
from test_engine import blame_strictness, golden_run
from test_solver import run_brute_force


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok
    return emit


def test_golden_worked_example(report):
    v, seen, blamed, all_blamed, seconds = golden_run()
    want = {f"a{k}" for k in range(1, 10)}
    ok = v.safe and seconds < 60 and seen == want and blamed == {"a9"} and all_blamed
    assert report("golden", ok, f"{v.label} in {seconds:.1f}s, classes {sorted(seen)}, blamed {sorted(blamed)}")


def test_corpus(report):
    start = time.monotonic()
    res = [(e, run(e.path)) for e in corpus_entries()]
    total = time.monotonic() - start
    sl = [v.safe for e, v in res if e.category in ("strings", "lists")]
    tr = [v.safe for e, v in res if e.category == "trees"]
    slow = [e.path.stem for e, v in res if v.stats.seconds >= 300]
    ok = len(sl) == 10 and sum(sl) >= 8 and len(tr) == 2 and sum(tr) >= 1 and not slow and total < 1800
    unknown = [e.path.stem for e, v in res if not v.safe]
    assert report("corpus", ok, f"strings/lists {sum(sl)}/{len(sl)}, trees {sum(tr)}/{len(tr)}, "
                                f"{total:.0f}s total, unknown {unknown}")


def test_mutant_soundness(report):
    rows = []
    for e in mutant_entries():
        v = run(e.path)
        witness = enumerate_reachable(load(e.path), max_size=3)
        rows.append((e.path.stem, not v.safe, isinstance(witness, FailingTraceWitness)))
    ok = len(rows) >= 6 and all(u and w for _, u, w in rows)
    bad = [n for n, u, w in rows if not (u and w)]
    assert report("soundness", ok, f"{sum(u for _, u, _ in rows)}/{len(rows)} mutants Unknown, "
                                   f"{sum(w for *_, w in rows)} confirmed by the oracle, problems {bad}")


UNBOUNDED = ["strlen", "strchr", "fill_first", "overlap_copy", "list_append_length"]


def test_descent_vs_classic(report):
    motivating = run(CORPUS_DIR / "motivating.c", "classic")
    unbounded = {n: run(CORPUS_DIR / f"{n}.c", "classic").safe for n in UNBOUNDED}
    disagree = [e.path.stem for e in corpus_entries() if run(e.path, "classic").safe and not run(e.path).safe]
    ok = not motivating.safe and not any(unbounded.values()) and not disagree
    assert report("descent-vs-classic", ok, f"classic {motivating.label} on worked example, "
                                            f"Safe on unbounded {[n for n, s in unbounded.items() if s]}, "
                                            f"disagreements {disagree}")


def test_solver_oracle(report):
    checked, bad, seconds = run_brute_force(1000)
    ok = not bad and seconds < 120
    assert report("solver-oracle", ok, f"1000 instances, {checked} entailments checked, "
                                       f"{len(bad)} unsound, {seconds:.1f}s")


def test_widening_contract(report):
    rng = random.Random(11)
    cases = [(rng.randrange(10**6), rng.randrange(2**32)) for _ in range(1000)]
    bad = [c for c in cases if not check_widening(*c)]
    assert report("widening", not bad, f"{len(cases)} herds, {len(bad)} violations")


def test_blame_strictness(report):
    paths = [e.path for e in corpus_entries() + mutant_entries()]
    checked, bad = blame_strictness(paths)
    assert report("blame-strictness", checked > 0 and not bad, f"{checked} blames re-checked, {len(bad)} not strict")


def test_determinism(report):
    entries = corpus_entries() + mutant_entries()
    tables = {w: {e.path.stem: run(e.path, "descent", w).safe for e in entries} for w in (1, 2, 4)}
    diff = sorted(n for n in tables[1] if len({tables[w][n] for w in tables}) > 1)
    assert report("determinism", not diff, f"workers 1/2/4 over {len(entries)} programs, differing {diff}")
