"""Counterexample-guided synthesis driver.

Outer loop: sketches from the TFG search. Inner loop: solve the compiled
sketch, fill the holes, run the program in the simulator. A failed run
becomes a learned clause in κ that excludes the failing model (and, after
repeated failures on the same sketch, a growing ball around it).
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction

from . import logic
from .afl import AttackProgram, AttackSketch, InvariantViolation, complete
from .cnstgen import MarketModel, compile_sketch, count_by_partition
from .goal import generate_goals, render_goal, target_tokens
from .ir import inline_calls
from .ir.inline import DEFAULT_DEPTH
from .logic import ConstraintSet, NamedAtom
from .sim import ChainState, Verdict, validate
from .sketch import KbClause, SketchBudget, SketchSearch
from .solver import Model, Sat, SolverSession, Unsat, differs
from .tfg import build_tfg


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    max_depth: int = 5
    max_sketches: int = 64
    models_per_sketch: int = 16
    probe_timeout_ms: int = 10_000
    solve_timeout_ms: int = 60_000
    inline_depth: int = DEFAULT_DEPTH
    radius_base: Fraction = Fraction(1, 100)
    radius_cap: Fraction = Fraction(1, 2)

    def __post_init__(self):
        for name in ("max_depth", "max_sketches", "models_per_sketch", "probe_timeout_ms", "solve_timeout_ms"):
            if getattr(self, name) <= 0:
                raise BudgetError(f"{name} must be positive")
        if self.inline_depth < 0:
            raise BudgetError("inline_depth must be non-negative")
        if not 0 <= self.radius_base <= self.radius_cap:
            raise BudgetError("need 0 <= radius_base <= radius_cap")

    @property
    def sketch_budget(self) -> SketchBudget:
        return SketchBudget(self.max_depth, self.max_sketches, self.probe_timeout_ms)


def model_hash(model: Model) -> str:
    text = ";".join(f"{k}={v}" for k, v in sorted(model.values.items()))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def failure_kind(verdict: Verdict) -> str:
    if verdict.trace.revert is not None:
        return verdict.trace.revert.reason
    if verdict.reason.startswith("InvariantViolation"):
        return "InvariantViolation"
    return "GoalNotMet"


def radius_fraction(failures: int, base: Fraction, cap: Fraction) -> Fraction:
    """0 for the first failure on a sketch, then base, 2·base, 4·base, ... up to cap."""
    if failures <= 1:
        return Fraction(0)
    return min(base * 2 ** (failures - 2), cap)


def learn_conflict(sk: AttackSketch, model: Model, verdict: Verdict, *, name: str,
                   radius: Fraction = Fraction(0), sketch_index: int = 0) -> KbClause:
    """Turn a failed validation into a clause excluding the responsible hole values.

    A revert at operation k blames the holes of operations 1..k, and the
    clause only applies to sketches sharing that path prefix. A run that
    completes but misses the goal blames every hole.
    """
    rev = verdict.trace.revert
    n = len(sk.ops)
    k = n if rev is None else min(rev.op_index, n)
    holes = sk.holes_upto(k)
    if not holes:
        holes, k = sk.holes, n
    parts = []
    for h in holes:
        v = Fraction(model[h])
        parts.append(differs(h, v, abs(v) * radius))
    formula = parts[0] if len(parts) == 1 else logic.or_(*parts)
    reason = failure_kind(verdict) + (f"@op{rev.op_index}" if rev is not None else "")
    return KbClause(name, formula, tuple(sk.source_path[:k]), reason, sketch_index, model_hash(model))


@dataclass
class SynthesisReport:
    outcome: str  # "attack" | "exhausted"
    goal: str = ""
    program: AttackProgram | None = None
    sketch_path: tuple = ()
    profit: dict = field(default_factory=dict)
    sketches_tried: int = 0
    models_tried: int = 0
    kappa: list = field(default_factory=list)
    constraint_counts: list = field(default_factory=list)
    solver: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    attempts: list = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.outcome == "attack"

    def to_dict(self, *, timing: bool = True) -> dict:
        d = {
            "outcome": self.outcome,
            "goal": self.goal,
            "program": self.program.to_dict() if self.program is not None else None,
            "rendered": self.program.render() if self.program is not None else "",
            "sketch_path": list(self.sketch_path),
            "profit": {k: _num(v) for k, v in sorted(self.profit.items())},
            "statistics": {
                "sketches_tried": self.sketches_tried,
                "models_tried": self.models_tried,
                "kappa_size": len(self.kappa),
                "solver": self.solver,
            },
            "constraint_counts": self.constraint_counts,
            "kappa": [
                {"name": c.name, "scope": list(c.scope), "reason": c.reason, "sketch": c.sketch,
                 "model": c.model_hash}
                for c in self.kappa
            ],
            "attempts": self.attempts,
        }
        if timing:
            d["timing"] = {k: round(v, 4) for k, v in sorted(self.timing.items())}
        return d

    def to_json(self, *, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing=timing), indent=2, ensure_ascii=False)


def _num(v) -> str:
    v = Fraction(v)
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def _kappa_for(kappa, sk: AttackSketch) -> list:
    return [c for c in kappa if c.applies(sk.source_path, sk.holes)]


def _consistent_with_s0(session, s0: ChainState, clause: KbClause) -> bool:
    from .cnstgen import bal_var

    atoms = [NamedAtom(f"s0.{t}.{a}", logic.eq(bal_var(t, a, 0), v), "initial-state")
             for (t, a), v in sorted(s0.balances.items())]
    atoms.append(NamedAtom(clause.name, clause.formula, "knowledge-base"))
    return isinstance(session.check(ConstraintSet(tuple(atoms))), Sat)


def synthesize_goal(g, s0: ChainState, goal, session: SolverSession, config: SynthConfig,
                    report: SynthesisReport, trace=None) -> bool:
    """Run the CEGIS loop for one goal, filling ``report``; True when an attack was found."""
    mm = MarketModel.from_state(s0)
    kappa: list[KbClause] = []
    search = SketchSearch(g, s0, goal, session, config.sketch_budget, kappa, trace)
    clock = report.timing
    while True:
        t = time.perf_counter()
        sk = search.next_sketch()
        clock["search_s"] = clock.get("search_s", 0.0) + time.perf_counter() - t
        if sk is None:
            break
        report.sketches_tried += 1
        idx = report.sketches_tried
        failures = 0
        counted = False
        attempt = {"sketch": idx, "path": list(sk.source_path), "ops": sk.render().splitlines(),
                   "models": []}
        report.attempts.append(attempt)
        for _ in range(config.models_per_sketch):
            cs = compile_sketch(s0, sk, goal, _kappa_for(kappa, sk), mm)
            if not counted:
                report.constraint_counts.append(
                    {"sketch": idx, "path": list(sk.source_path), "atoms": len(cs),
                     "by_partition": count_by_partition(cs)})
                counted = True
            t = time.perf_counter()
            res = session.check(cs, config.solve_timeout_ms)
            clock["solve_s"] = clock.get("solve_s", 0.0) + time.perf_counter() - t
            if not isinstance(res, Sat):
                attempt["models"].append({"solver": "unsat" if isinstance(res, Unsat) else "unknown"})
                break
            report.models_tried += 1
            model = res.model.restrict(sk.holes)
            t = time.perf_counter()
            try:
                prog = complete(sk, model)
                verdict = validate(prog, s0, goal)
            except InvariantViolation as exc:
                prog, verdict = None, None
                reason = f"InvariantViolation: {exc}"
            clock["sim_s"] = clock.get("sim_s", 0.0) + time.perf_counter() - t
            if verdict is not None and verdict.passed:
                # final gate: a reported attack must re-validate from scratch
                again = validate(prog, s0, goal)
                if again.passed:
                    attempt["models"].append({"model": model_hash(model), "verdict": "pass"})
                    report.outcome = "attack"
                    report.program = prog
                    report.sketch_path = sk.source_path
                    report.profit = {
                        tok: again.end.balance(tok, s0.attacker) - s0.balance(tok, s0.attacker)
                        for tok in sorted(target_tokens(goal))
                    }
                    report.kappa.extend(kappa)
                    return True
            if verdict is None:
                verdict = Verdict(False, _empty_trace(), s0, reason)
            failures += 1
            radius = radius_fraction(failures, config.radius_base, config.radius_cap)
            name = f"kb.{len(kappa) + 1}"
            clause = learn_conflict(sk, model, verdict, name=name, radius=radius, sketch_index=idx)
            attempt["models"].append({"model": model_hash(model), "verdict": "fail",
                                      "reason": verdict.reason, "clause": clause.name})
            if not _consistent_with_s0(session, s0, clause):
                raise RuntimeError(f"learned clause {clause.name} contradicts the initial state")
            kappa.append(clause)
    report.kappa.extend(kappa)
    return False


def _empty_trace():
    from .sim import ExecutionTrace

    return ExecutionTrace()


def synthesize(p, s0: ChainState, goals=None, *, session: SolverSession | None = None,
               config: SynthConfig | None = None, trace=None) -> SynthesisReport:
    """Search for an attack on ``p`` from ``s0`` meeting one of ``goals``.

    ``goals`` defaults to the generated stablecoin profit goals, tried in order.
    """
    config = config or SynthConfig()
    own = session is None
    session = session or SolverSession()
    wall = time.perf_counter()
    before = replace(session.stats)
    try:
        inlined = inline_calls(p, config.inline_depth)
        g = build_tfg(inlined)
        if goals is None:
            goals = generate_goals(p)
        if not isinstance(goals, (list, tuple)):
            goals = [goals]
        report = SynthesisReport("exhausted")
        for goal in goals:
            report.goal = render_goal(goal)
            if synthesize_goal(g, s0, goal, session, config, report, trace):
                break
        else:
            if not goals:
                report.goal = ""
        report.solver = session.stats.since(before)
        report.timing["solver_s"] = session.stats.wall_time - before.wall_time
        report.timing["wall_s"] = time.perf_counter() - wall
        return report
    finally:
        if own:
            session.close()
