import json

import pytest

from conftest import FIXTURES, SOLVER_MODE, TRANSCRIPTS
from foray.cli import EXIT_DATA, EXIT_EXHAUSTED, EXIT_FAIL, EXIT_OK, EXIT_USAGE, main

IR = str(FIXTURES / "mumug.ir")
STATE = str(FIXTURES / "mumug.state")
PATCHED = str(FIXTURES / "mumug_patched.state")
SOLVER = ["--solver-mode", SOLVER_MODE, "--transcripts", str(TRANSCRIPTS)]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_graph_dot(capsys):
    code, out, _ = run(capsys, "graph", "--protocol", IR)
    assert code == EXIT_OK
    lines = out.splitlines()
    assert sum("shape=" in l for l in lines) == 3
    assert sum(" -> " in l for l in lines) == 5


def test_graph_json(capsys):
    code, out, _ = run(capsys, "graph", "--protocol", IR, "--format", "json")
    assert code == EXIT_OK
    g = json.loads(out)
    assert sorted(g["nodes"]) == ["MU", "USDCe", "ε"]
    assert len(g["edges"]) == 5


def test_synth_attack(capsys):
    code, out, _ = run(capsys, "synth", "--protocol", IR, "--state", STATE, "--no-timing", *SOLVER)
    assert code == EXIT_OK
    report = json.loads(out)
    assert report["outcome"] == "attack"
    assert [op.split("(")[0] for op in report["program"]["ops"]] == ["borrow", "swap", "swap", "payback"]


def test_synth_json_stable(capsys):
    argv = ["synth", "--protocol", IR, "--state", STATE, "--no-timing", *SOLVER]
    first = run(capsys, *argv)
    second = run(capsys, *argv)
    assert first == second


def test_synth_text(capsys):
    code, out, _ = run(capsys, "synth", "--protocol", IR, "--state", STATE, "--format", "text", *SOLVER)
    assert code == EXIT_OK
    assert out.startswith("# attack for goal: 0 < balance(USDCe, attacker, end)")


def test_synth_patched(capsys):
    code, out, _ = run(capsys, "synth", "--protocol", IR, "--state", PATCHED, "--no-timing", *SOLVER)
    assert code == EXIT_EXHAUSTED
    assert json.loads(out)["outcome"] == "exhausted"


def test_sketch_listing(capsys):
    code, out, _ = run(capsys, "sketch", "--protocol", IR, "--state", STATE, "--max-sketches", "1", *SOLVER)
    assert code == EXIT_OK
    (first,) = json.loads(out)["sketches"]
    assert first["labels"] == ["borrow¹", "swap²", "swap¹", "payback¹"]


def test_validate(capsys):
    program = str(FIXTURES / "mumug_exploit.afl")
    goal = str(FIXTURES / "usdce_profit.goal")
    code, out, _ = run(capsys, "validate", "--protocol", IR, "--state", STATE, "--program", program,
                       "--goal", goal)
    assert code == EXIT_OK and json.loads(out)["passed"]
    code, out, _ = run(capsys, "validate", "--protocol", IR, "--state", PATCHED, "--program", program)
    assert code == EXIT_FAIL
    assert "InsufficientBalance" in json.loads(out)["results"][0]["reason"]


def test_missing_file(capsys):
    code, _, err = run(capsys, "graph", "--protocol", "no/such/file.ir")
    assert code == EXIT_USAGE
    assert json.loads(err.strip().splitlines()[-1]) == {
        "error": "FileNotFound", "message": "no such file: no/such/file.ir", "path": "no/such/file.ir"}


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["synth", "--protocol", IR],
    ["synth", "--protocol", IR, "--state", STATE, "--max-depth", "0"],
    ["synth", "--protocol", IR, "--state", STATE, "--solver-mode", "replay"],
])
def test_usage_errors(capsys, argv, monkeypatch):
    monkeypatch.delenv("FORAY_TRANSCRIPTS", raising=False)
    code, _, err = run(capsys, *argv)
    assert code == EXIT_USAGE
    assert json.loads(err.strip().splitlines()[-1])["error"] == "UsageError"


def test_bad_input(capsys, tmp_path):
    bad = tmp_path / "bad.ir"
    bad.write_text("protocol p\ntoken\n")
    code, _, err = run(capsys, "graph", "--protocol", str(bad))
    assert code == EXIT_DATA
    diag = json.loads(err)
    assert diag["error"] == "ParseError" and diag["line"] == 2
