"""Synthesize the mumug attack and replay it step by step in the simulator.

    python3 scripts/run_mumug.py [--state fixtures/mumug.state] [--solver-mode auto]
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from foray.ir import load_protocol
from foray.sim import execute, load_state_file
from foray.solver import SolverSession
from foray.synth import synthesize

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--protocol", default=str(FIXTURES / "mumug.ir"))
    ap.add_argument("--state", default=str(FIXTURES / "mumug.state"))
    ap.add_argument("--solver-mode", default="auto", choices=("live", "record", "replay", "auto"))
    ap.add_argument("--transcripts", default=str(FIXTURES / "transcripts"))
    args = ap.parse_args(argv)

    p = load_protocol(args.protocol)
    s0 = load_state_file(args.state)
    with SolverSession(mode=args.solver_mode, transcripts=Path(args.transcripts)) as session:
        report = synthesize(p, s0, session=session)
    print(f"goal: {report.goal}")
    print(f"sketches tried: {report.sketches_tried}, models tried: {report.models_tried}, "
          f"learned clauses: {len(report.kappa)}, solver queries: {report.solver.get('queries', 0)}")
    if not report.found:
        print("no attack found")
        return 2
    print("\nattack program:")
    print(report.program.render(), end="")
    print("\nexecution:")
    res = execute(report.program, s0)
    for step in res.trace.steps:
        moved = ", ".join(f"{tok}[{addr}] {'+' if delta > 0 else ''}{delta}" for tok, addr, delta in step.deltas)
        print(f"  {step.index}. {step.op}\n       {moved or 'no balance change'}")
    for tok, gain in sorted(report.profit.items()):
        print(f"\nprofit: {gain} {tok} (base units)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
