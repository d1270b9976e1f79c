"""Sketch enumeration by constrained breadth-first search over the TFG.

A search state is a path of edges, chained so each edge leaves the node the
previous one entered (the first edge leaves a token the attacker holds, or
ε). Before a path is extended the solver checks that the accumulated edge
constraints, the initial balances and the learned clauses still admit a
solution; infeasible extensions are pruned for that path only.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterator

from . import logic
from .afl import AttackSketch, sketch_from_path
from .cnstgen import bal_var
from .goal import target_tokens
from .logic import ConstraintSet, NamedAtom, Var
from .solver import Sat, SolverError, Unknown
from .tfg import EPS, TokenFlowGraph, decode_var

log = logging.getLogger(__name__)


class ProbeFailed(SolverError):
    def __init__(self, message: str, query: ConstraintSet):
        super().__init__(message)
        self.query = query


@dataclass(frozen=True)
class SketchBudget:
    max_depth: int = 5
    max_sketches: int = 64
    probe_timeout_ms: int = 10_000

    def __post_init__(self):
        for name in ("max_depth", "max_sketches", "probe_timeout_ms"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class KbClause:
    """A learned clause, active on every path that starts with ``scope``."""

    name: str
    formula: logic.Term
    scope: tuple = ()
    reason: str = ""
    sketch: int = 0
    model_hash: str = ""

    def applies(self, path: tuple, holes=None) -> bool:
        """Does the clause constrain a sketch for ``path``? With ``holes`` given, it
        must also mention only holes the sketch has; a clause about a missing
        hole says nothing about the sketch."""
        if tuple(path[: len(self.scope)]) != tuple(self.scope):
            return False
        return holes is None or logic.free_vars(self.formula) <= set(holes)


@dataclass(frozen=True)
class SearchState:
    path: tuple = ()
    held: frozenset = frozenset()
    node: str | None = None  # node the path currently sits on

    @property
    def depth(self) -> int:
        return len(self.path)


def initial_tokens(g: TokenFlowGraph, s0) -> frozenset:
    held = frozenset(
        t for t in g.nodes if t != EPS and s0.balance(t, s0.attacker) > 0
    )
    return held or frozenset((EPS,))


def init_search(g: TokenFlowGraph, s0) -> SearchState:
    return SearchState((), initial_tokens(g, s0), None)


def hole_names(path) -> list:
    """Per edge, the hole names ``sketch_from_path`` will give its amounts."""
    out, n = [], 0
    for e in path:
        k = 2 if e.op == "swap" else 1
        out.append(tuple(f"h{n + i + 1}" for i in range(k)))
        n += k
    return out


def path_constraints(g: TokenFlowGraph, path, s0, kappa=(), *, strict: bool = True) -> ConstraintSet:
    """Ω ∧ κ for a path: S₀ facts, each edge's Φ at its step, frames, positivity."""
    pairs = {(t, a) for (t, a) in s0.balances}
    for e in path:
        for v in logic.free_vars(e.phi):
            parts = decode_var(v)
            if parts[0] != "amt":
                pairs.add((parts[1], parts[2]))
    pairs = sorted(pairs)
    atoms = [
        NamedAtom(f"s0.{t}.{a}", logic.eq(bal_var(t, a, 0), s0.balance(t, a)), "initial-state")
        for t, a in pairs
    ]
    for step, (e, holes) in enumerate(zip(path, hole_names(path)), start=1):
        amounts = dict(zip(e.amounts, holes))
        mapping = {}
        touched = set()
        for v in logic.free_vars(e.phi):
            parts = decode_var(v)
            if parts[0] == "amt":
                mapping[v] = Var(amounts[parts[1]])
            else:
                kind, t, a = parts
                mapping[v] = bal_var(t, a, step - 1 if kind == "pre" else step)
                touched.add((t, a))
        part = f"op-step {step}"
        atoms.append(NamedAtom(f"op{step}.phi", logic.substitute(e.phi, mapping), part))
        for t, a in pairs:
            if (t, a) not in touched:
                atoms.append(NamedAtom(f"op{step}.frame.{t}.{a}",
                                       logic.eq(bal_var(t, a, step), bal_var(t, a, step - 1)), part))
            atoms.append(NamedAtom(f"op{step}.nonneg.{t}.{a}", logic.ge(bal_var(t, a, step), 0), part))
        for h in holes:
            bound = logic.gt(h, 0) if strict else logic.ge(h, 0)
            atoms.append(NamedAtom(f"op{step}.hole.{h}", bound, part))
    ids = tuple(e.id for e in path)
    all_holes = [h for hs in hole_names(path) for h in hs]
    for c in kappa:
        if c.applies(ids, all_holes):
            atoms.append(NamedAtom(c.name, c.formula, "knowledge-base"))
    return ConstraintSet(tuple(atoms))


def pairing_ok(path) -> bool:
    ops = []
    for e in path:
        if e.op in ("borrow", "payback"):
            ops.append(e)
    stack = []
    for e in ops:
        key = (e.actor, e.tokens[0])
        if e.op == "borrow":
            stack.append(key)
        else:
            if not stack or stack[-1] != key:
                return False
            stack.pop()
    return not stack


class SketchSearch:
    """Resumable enumerator; call :meth:`next_sketch` until it returns None.

    ``kappa`` is read live, so clauses learned between calls prune later probes.
    """

    def __init__(self, g: TokenFlowGraph, s0, goal, session, budget: SketchBudget | None = None,
                 kappa: list | None = None, trace: Callable[[str], None] | None = None):
        self.g = g
        self.s0 = s0
        self.goal = goal
        self.session = session
        self.budget = budget or SketchBudget()
        self.kappa = kappa if kappa is not None else []
        self.targets = target_tokens(goal)
        self.trace_lines: list[str] = []
        self._trace = trace
        self.yielded = 0
        self.probes = 0
        self._gen = self._run()
        self.exhausted = False

    def _log(self, line: str):
        self.trace_lines.append(line)
        log.debug(line)
        if self._trace is not None:
            self._trace(line)

    def probe(self, path) -> bool:
        cs = path_constraints(self.g, path, self.s0, self.kappa)
        self.probes += 1
        try:
            res = self.session.check(cs, self.budget.probe_timeout_ms)
        except SolverError as exc:
            raise ProbeFailed(f"probe of path {[e.id for e in path]} failed: {exc}", cs) from exc
        if isinstance(res, Unknown):
            # treat as feasible: pruning must stay sound
            return True
        return isinstance(res, Sat)

    def _covers(self, held) -> bool:
        return bool(self.targets) and self.targets <= held

    def _run(self) -> Iterator[AttackSketch]:
        start = init_search(self.g, self.s0)
        queue = deque([start])
        while queue:
            st = queue.popleft()
            if st.depth >= self.budget.max_depth:
                continue
            sources = st.held if st.node is None else {st.node}
            path = [self.g.edge(eid) for eid in st.path]
            for e in self.g.edges:
                if e.src not in sources:
                    continue
                new_path = path + [e]
                ok = self.probe(new_path)
                self._log(f"depth={st.depth + 1} path={'.'.join(x.id for x in new_path)} "
                          f"edge={e.id} {'sat' if ok else 'unsat'}")
                if not ok:
                    continue
                nxt = SearchState(st.path + (e.id,), st.held | {e.src, e.dst}, e.dst)
                queue.append(nxt)
                if self._covers(nxt.held) and pairing_ok(new_path):
                    yield sketch_from_path(new_path)

    def next_sketch(self) -> AttackSketch | None:
        if self.exhausted or self.yielded >= self.budget.max_sketches:
            self.exhausted = True
            return None
        try:
            sk = next(self._gen)
        except StopIteration:
            self.exhausted = True
            return None
        self.yielded += 1
        return sk

    def __iter__(self):
        while True:
            sk = self.next_sketch()
            if sk is None:
                return
            yield sk


def next_sketch(search: SketchSearch) -> AttackSketch | None:
    return search.next_sketch()
