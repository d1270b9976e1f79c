"""Constraint counts per partition for every sketch the search yields on a fixture.

    python3 scripts/constraint_counts.py [--state fixtures/mumug.state] [--max-sketches 8]

Prints one row per sketch: path, edge labels, total atoms and the split over
initial-state / op-step / goal partitions. Solver queries use the bundled
transcripts when available.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from foray.cnstgen import compile_sketch, count_by_partition
from foray.goal import generate_goals, render_goal
from foray.ir import inline_calls, load_protocol
from foray.sim import load_state_file
from foray.sketch import SketchBudget, SketchSearch
from foray.solver import SolverSession
from foray.tfg import build_tfg

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--protocol", default=str(FIXTURES / "mumug.ir"))
    ap.add_argument("--state", default=str(FIXTURES / "mumug.state"))
    ap.add_argument("--max-depth", type=int, default=5)
    ap.add_argument("--max-sketches", type=int, default=8)
    ap.add_argument("--solver-mode", default="auto", choices=("live", "record", "replay", "auto"))
    ap.add_argument("--transcripts", default=str(FIXTURES / "transcripts"))
    args = ap.parse_args(argv)

    p = load_protocol(args.protocol)
    s0 = load_state_file(args.state)
    g = build_tfg(inline_calls(p))
    budget = SketchBudget(args.max_depth, args.max_sketches)
    with SolverSession(mode=args.solver_mode, transcripts=Path(args.transcripts)) as session:
        for goal in generate_goals(p):
            print(f"goal: {render_goal(goal)}")
            print(f"{'path':<16} {'labels':<32} {'atoms':>5}  partitions")
            for sk in SketchSearch(g, s0, goal, session, budget):
                cs = compile_sketch(s0, sk, goal)
                labels = " ".join(g.label(e) for e in sk.source_path)
                parts = ", ".join(f"{k} {v}" for k, v in sorted(count_by_partition(cs).items()))
                print(f"{' '.join(sk.source_path):<16} {labels:<32} {len(cs):>5}  {parts}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
