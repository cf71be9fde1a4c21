import functools
from pathlib import Path

import pytest

from herdverify import domain as D
from herdverify.cli import CORPUS_DIR, read_manifest
from herdverify.engine import EngineConfig, verify_with_retry
from herdverify.frontend import load_program

MUTANT_DIR = CORPUS_DIR / "mutants"


def corpus_entries():
    return read_manifest(CORPUS_DIR / "manifest.txt")


def mutant_entries():
    return read_manifest(MUTANT_DIR / "manifest.txt")


@functools.lru_cache(maxsize=None)
def load(path) -> object:
    ir, _ = load_program(Path(path).read_text())
    return ir


def load_src(src: str):
    return load_program(src)[0]


@functools.lru_cache(maxsize=None)
def run(path, mode: str = "descent", workers: int = 1, timeout: float = 300.0):
    return verify_with_retry(load(path), None, EngineConfig(mode=mode, workers=workers, timeout=timeout))


def program(src: str, **cfg) -> D.Program:
    return D.Program(load_src(src), D.DomainConfig(**cfg))


def drive(h: D.Herd, pc: int, choose=None, limit: int = 200) -> D.Herd:
    """Step the primary (splitting as needed) until it sits at ``pc``.

    ``choose`` picks one split child; by default the first one.
    """
    choose = choose or (lambda cs: cs[0])
    for _ in range(limit):
        kids = D.split(h)
        h = choose(kids) if len(kids) > 1 else kids[0]
        if h.primary.pc == pc:
            return h
        nxt = D.step_primary(h)
        assert nxt is not None, f"primary stopped at {h.primary.pc}"
        h = nxt
        if h.primary.pc == pc:
            return h
    raise AssertionError(f"pc {pc} not reached")


@pytest.fixture
def motivating_ir():
    return load(CORPUS_DIR / "motivating.c")
