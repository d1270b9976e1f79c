"""Refresh solver transcripts and golden files for the bundled fixtures.

Runs every fixture-driven query against the live solver in record mode,
rewrites fixtures/golden/, then reruns the test suite in record mode so the
remaining fixture queries are captured too. Needs z3 on PATH.

    python3 scripts/record_transcripts.py [--clean] [--skip-tests]
"""
from __future__ import annotations

import argparse
import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

from foray.afl import sketch_from_path
from foray.cnstgen import compile_sketch, count_by_partition
from foray.goal import profit_goal
from foray.ir import inline_calls, load_protocol
from foray.sim import load_state_file
from foray.solver import SolverSession
from foray.synth import synthesize
from foray.tfg import build_tfg

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"
TRANSCRIPTS = FIXTURES / "transcripts"
GOLDEN = FIXTURES / "golden"
ATTACK_PATH = ("e1", "e4", "e3", "e2")


def golden_files(session: SolverSession) -> dict[str, str]:
    p = load_protocol(FIXTURES / "mumug.ir")
    s0 = load_state_file(FIXTURES / "mumug.state")
    patched = load_state_file(FIXTURES / "mumug_patched.state")
    g = build_tfg(inline_calls(p))
    sk = sketch_from_path([g.edge(e) for e in ATTACK_PATH])
    cs = compile_sketch(s0, sk, profit_goal("USDCe"))
    counts = {"path": list(ATTACK_PATH), "atoms": len(cs), "by_partition": count_by_partition(cs)}
    return {
        "mumug_tfg.json": g.to_json(),
        "constraint_counts.json": json.dumps(counts, indent=2, sort_keys=True),
        "mumug_report.json": synthesize(p, s0, session=session).to_json(timing=False),
        "mumug_patched_report.json": synthesize(p, patched, session=session).to_json(timing=False),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--clean", action="store_true", help="delete existing transcripts first")
    ap.add_argument("--skip-tests", action="store_true", help="only refresh goldens")
    args = ap.parse_args(argv)
    if args.clean and TRANSCRIPTS.exists():
        shutil.rmtree(TRANSCRIPTS)
    TRANSCRIPTS.mkdir(parents=True, exist_ok=True)
    GOLDEN.mkdir(parents=True, exist_ok=True)
    with SolverSession(mode="record", transcripts=TRANSCRIPTS) as session:
        for name, text in golden_files(session).items():
            (GOLDEN / name).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
            print(f"wrote {GOLDEN / name}")
    if args.skip_tests:
        return 0
    env = {**os.environ, "FORAY_SOLVER_MODE": "record"}
    return subprocess.call([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider"], cwd=ROOT, env=env)


if __name__ == "__main__":
    sys.exit(main())
