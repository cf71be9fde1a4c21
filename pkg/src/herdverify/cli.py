"""Command-line entry point: ``verify`` a single program or ``bench`` a manifest."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, TextIO

from .engine import EngineConfig, verify_with_retry
from .frontend import Diagnostic, load_program

EXIT_SAFE = 0
EXIT_UNKNOWN = 1
EXIT_DIAGNOSTIC = 2
EXIT_USAGE = 64

CATEGORIES = ("strings", "lists", "trees")
CORPUS_DIR = Path(__file__).parent / "corpus"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    d = EngineConfig()
    p.add_argument("--mode", choices=["descent", "classic"], default=d.mode)
    p.add_argument("--unroll", type=int, default=d.unroll)
    p.add_argument("--size-bound", type=int, default=d.size_bound)
    p.add_argument("--max-retries", type=int, default=d.max_retries)
    p.add_argument("--prefix", type=int, default=d.prefix)
    p.add_argument("--workers", type=int, default=d.workers)
    p.add_argument("--timeout", type=float, default=d.timeout)
    p.add_argument("--overflow-checks", action="store_true")
    p.add_argument("--stats", choices=["json", "text"], default="text")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="herdverify")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    v = sub.add_parser("verify", help="verify one C program")
    v.add_argument("file")
    _add_engine_flags(v)
    b = sub.add_parser("bench", help="run every instance of a manifest")
    b.add_argument("manifest", nargs="?", default=str(CORPUS_DIR / "manifest.txt"))
    _add_engine_flags(b)
    return parser


def config_from_args(ns: argparse.Namespace) -> EngineConfig:
    return EngineConfig(mode=ns.mode, unroll=ns.unroll, size_bound=ns.size_bound,
                        max_retries=ns.max_retries, prefix=ns.prefix, workers=ns.workers,
                        timeout=ns.timeout, overflow_checks=ns.overflow_checks)


def _print_stats(stats: dict, style: str, out: TextIO) -> None:
    if style == "json":
        print(json.dumps(stats, sort_keys=True), file=out)
    else:
        for k, v in stats.items():
            print(f"  {k}: {v}", file=out)


def verify_file(path: str, cfg: EngineConfig):
    """Returns (verdict label, stats dict, reason) or raises Diagnostic / OSError."""
    source = Path(path).read_text()
    ir, _ = load_program(source, overflow_checks=cfg.overflow_checks)
    v = verify_with_retry(ir, None, cfg)
    return v.label, v.stats.as_dict(), v.reason


def cmd_verify(ns: argparse.Namespace, out: TextIO) -> int:
    try:
        cfg = config_from_args(ns)
    except ValueError as e:
        print(f"herdverify: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        label, stats, reason = verify_file(ns.file, cfg)
    except OSError as e:
        print(f"{ns.file}: error: {e.strerror or e}", file=out)
        return EXIT_DIAGNOSTIC
    except Diagnostic as d:
        print(d.render(ns.file), file=out)
        return EXIT_DIAGNOSTIC
    print(label if not reason else f"{label} ({reason})", file=out)
    _print_stats(stats, ns.stats, out)
    return EXIT_SAFE if label == "SAFE" else EXIT_UNKNOWN


# ---------------------------------------------------------------- bench


@dataclass
class ManifestEntry:
    path: Path
    category: str
    expected: str  # "safe" | "unknown"


@dataclass
class BenchResult:
    name: str
    category: str
    verdict: str  # SAFE | UNKNOWN | ERROR
    seconds: float
    expected: str = "safe"
    stats: dict = field(default_factory=dict)
    error: Optional[str] = None

    def row(self) -> dict:
        d = {"name": self.name, "category": self.category, "verdict": self.verdict,
             "seconds": round(self.seconds, 3), "expected": self.expected.upper()}
        if self.error:
            d["error"] = self.error
        if self.stats:
            d["stats"] = self.stats
        return d

    @property
    def violates(self) -> bool:
        if self.expected == "safe":
            return self.verdict != "SAFE"
        return self.verdict == "SAFE"


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """One instance per line: path category expected.  Paths are relative to the manifest."""
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'path category expected'")
        file, category, expected = parts
        if category not in CATEGORIES:
            raise ValueError(f"{path}:{lineno}: unknown category {category!r}")
        expected = expected.lower()
        if expected not in ("safe", "unknown"):
            raise ValueError(f"{path}:{lineno}: expected verdict must be safe or unknown")
        entries.append(ManifestEntry(path.parent / file, category, expected))
    return entries


def run_bench(entries: list[ManifestEntry], cfg: EngineConfig, out: Optional[TextIO] = None) -> list[BenchResult]:
    results = []
    for e in entries:
        start = time.monotonic()
        try:
            label, stats, _ = verify_file(str(e.path), cfg)
            r = BenchResult(e.path.stem, e.category, label, time.monotonic() - start, e.expected, stats)
        except (OSError, Diagnostic) as exc:
            r = BenchResult(e.path.stem, e.category, "ERROR", time.monotonic() - start, e.expected,
                            error=str(exc))
        results.append(r)
        if out is not None:
            print(json.dumps(r.row(), sort_keys=True), file=out, flush=True)
    return results


def summarize(results: list[BenchResult]) -> dict:
    summary = {}
    for c in CATEGORIES:
        rows = [r for r in results if r.category == c]
        if rows:
            summary[c] = {"total": len(rows), "safe": sum(r.verdict == "SAFE" for r in rows)}
    summary["total"] = {"total": len(results), "safe": sum(r.verdict == "SAFE" for r in results),
                        "violations": sum(r.violates for r in results)}
    return summary


def cmd_bench(ns: argparse.Namespace, out: TextIO) -> int:
    try:
        cfg = config_from_args(ns)
        entries = read_manifest(ns.manifest)
    except ValueError as e:
        print(f"herdverify: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"{ns.manifest}: error: {e.strerror or e}", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    results = run_bench(entries, cfg, out)
    print(json.dumps({"summary": summarize(results)}, sort_keys=True), file=out)
    return 1 if any(r.violates for r in results) else 0


def main(argv: Optional[list[str]] = None, out: TextIO = None) -> int:
    out = out if out is not None else sys.stdout
    try:
        ns = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    if ns.command == "verify":
        return cmd_verify(ns, out)
    return cmd_bench(ns, out)


if __name__ == "__main__":
    sys.exit(main())
