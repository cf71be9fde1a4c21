import io
import json
import subprocess
import sys

import pytest

from herdverify.cli import main, read_manifest

from conftest import CORPUS_DIR, MUTANT_DIR


def cli(*argv):
    out = io.StringIO()
    code = main(list(argv), out)
    return code, out.getvalue()


def test_safe_exit_zero():
    code, text = cli("verify", str(CORPUS_DIR / "motivating.c"))
    assert code == 0
    assert text.splitlines()[0] == "SAFE"


def test_unknown_exit_one():
    code, text = cli("verify", str(MUTANT_DIR / "motivating_buggy.c"))
    assert code == 1
    assert text.startswith("UNKNOWN")


def test_diagnostic_exit_two():
    path = CORPUS_DIR / "diagnostics" / "uses_union.c"
    code, text = cli("verify", str(path))
    assert code == 2
    assert f"{path}:1:" in text and "union" in text


def test_missing_file_exit_two():
    code, _ = cli("verify", "/nonexistent/file.c")
    assert code == 2


@pytest.mark.parametrize("argv", [["--bogus"], ["verify"], ["verify", "x.c", "--workers", "0"],
                                  ["verify", "x.c", "--mode", "fast"]])
def test_bad_arguments_exit_64(argv, capsys):
    code, _ = cli(*argv)
    assert code == 64


def test_json_stats():
    code, text = cli("verify", str(CORPUS_DIR / "list_count.c"), "--stats", "json")
    stats = json.loads(text.splitlines()[1])
    assert code == 0
    assert stats["herds"] >= 1 and stats["attempts"] == 1


def test_classic_mode_flag():
    code, _ = cli("verify", str(CORPUS_DIR / "motivating.c"), "--mode", "classic")
    assert code == 1


def bench(manifest, *extra):
    code, text = cli("bench", str(manifest), *extra)
    lines = [json.loads(x) for x in text.splitlines()]
    return code, lines[:-1], lines[-1]["summary"]


def test_bench_on_mutants():
    code, rows, summary = bench(MUTANT_DIR / "manifest.txt")
    assert code == 0
    assert len(rows) == len(read_manifest(MUTANT_DIR / "manifest.txt"))
    assert all(r["verdict"] == "UNKNOWN" for r in rows)
    assert summary["total"] == {"total": len(rows), "safe": 0, "violations": 0}
    assert sum(summary[c]["total"] for c in summary if c != "total") == len(rows)


def test_bench_empty_manifest(tmp_path):
    m = tmp_path / "manifest.txt"
    m.write_text("# nothing here\n")
    code, rows, summary = bench(m)
    assert code == 0 and rows == []
    assert summary == {"total": {"total": 0, "safe": 0, "violations": 0}}


def test_bench_missing_file_row(tmp_path):
    m = tmp_path / "manifest.txt"
    m.write_text("gone.c strings safe\n")
    code, rows, summary = bench(m)
    assert rows[0]["verdict"] == "ERROR" and "error" in rows[0]
    assert code == 1 and summary["total"]["violations"] == 1


def test_bench_expected_safe_met(tmp_path):
    (tmp_path / "a.c").write_text((CORPUS_DIR / "list_count.c").read_text())
    m = tmp_path / "manifest.txt"
    m.write_text("a.c lists safe\n")
    code, rows, summary = bench(m)
    assert code == 0 and rows[0]["verdict"] == "SAFE" and rows[0]["expected"] == "SAFE"
    assert summary["lists"] == {"total": 1, "safe": 1}


@pytest.mark.parametrize("text", ["a.c queues safe\n", "a.c lists maybe\n", "a.c lists\n"])
def test_bad_manifest_rejected(tmp_path, text):
    m = tmp_path / "manifest.txt"
    m.write_text(text)
    with pytest.raises(ValueError):
        read_manifest(m)
    assert cli("bench", str(m))[0] == 64


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "herdverify.cli", "verify", str(CORPUS_DIR / "strlen.c")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("SAFE")
