"""Quantifier-free formulas over exact rationals.

Everything that ends up in a solver query (edge constraints, compiled
sketches, goals, learned clauses) is built from the small term language
here. Terms render to SMT-LIB2 and can be evaluated directly with
``fractions.Fraction`` so tests never need a solver to check a model.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Union

Number = Union[int, Fraction]

ARITH_OPS = ("+", "-", "*")
CMP_OPS = ("=", ">=", "<=", "<", ">")
BOOL_OPS = ("and", "or", "not")


class Term:
    __slots__ = ()


@dataclass(frozen=True)
class Var(Term):
    name: str


@dataclass(frozen=True)
class Const(Term):
    value: Fraction

    def __post_init__(self):
        if not isinstance(self.value, Fraction):
            object.__setattr__(self, "value", Fraction(self.value))


@dataclass(frozen=True)
class App(Term):
    op: str
    args: tuple

    def __post_init__(self):
        if self.op not in ARITH_OPS + CMP_OPS + BOOL_OPS:
            raise ValueError(f"unknown operator {self.op!r}")


TRUE = App("and", ())
FALSE = App("or", ())


def _t(x) -> Term:
    if isinstance(x, Term):
        return x
    if isinstance(x, (int, Fraction)):
        return Const(Fraction(x))
    if isinstance(x, str):
        return Var(x)
    raise TypeError(f"cannot coerce {x!r} to a term")


def add(*xs) -> Term:
    return App("+", tuple(_t(x) for x in xs))


def sub(a, b) -> Term:
    return App("-", (_t(a), _t(b)))


def mul(*xs) -> Term:
    return App("*", tuple(_t(x) for x in xs))


def eq(a, b) -> Term:
    return App("=", (_t(a), _t(b)))


def ge(a, b) -> Term:
    return App(">=", (_t(a), _t(b)))


def le(a, b) -> Term:
    return App("<=", (_t(a), _t(b)))


def lt(a, b) -> Term:
    return App("<", (_t(a), _t(b)))


def gt(a, b) -> Term:
    return App(">", (_t(a), _t(b)))


def and_(*xs) -> Term:
    return App("and", tuple(_t(x) for x in xs))


def or_(*xs) -> Term:
    return App("or", tuple(_t(x) for x in xs))


def not_(x) -> Term:
    return App("not", (_t(x),))


def free_vars(term: Term) -> set[str]:
    out: set[str] = set()
    stack = [term]
    while stack:
        t = stack.pop()
        if isinstance(t, Var):
            out.add(t.name)
        elif isinstance(t, App):
            stack.extend(t.args)
    return out


def substitute(term: Term, mapping: Mapping[str, Term]) -> Term:
    if isinstance(term, Var):
        return mapping.get(term.name, term)
    if isinstance(term, App):
        return App(term.op, tuple(substitute(a, mapping) for a in term.args))
    return term


class EvalError(KeyError):
    pass


def evaluate(term: Term, env: Mapping[str, Fraction]):
    """Evaluate ``term`` under ``env``; returns a Fraction or a bool."""
    if isinstance(term, Const):
        return term.value
    if isinstance(term, Var):
        try:
            return Fraction(env[term.name])
        except KeyError:
            raise EvalError(term.name) from None
    op, args = term.op, term.args
    if op == "and":
        return all(evaluate(a, env) for a in args)
    if op == "or":
        return any(evaluate(a, env) for a in args)
    if op == "not":
        return not evaluate(args[0], env)
    vals = [evaluate(a, env) for a in args]
    if op == "+":
        return sum(vals, Fraction(0))
    if op == "-":
        if len(vals) == 1:
            return -vals[0]
        acc = vals[0]
        for v in vals[1:]:
            acc -= v
        return acc
    if op == "*":
        acc = Fraction(1)
        for v in vals:
            acc *= v
        return acc
    a, b = vals
    return {
        "=": a == b,
        ">=": a >= b,
        "<=": a <= b,
        "<": a < b,
        ">": a > b,
    }[op]


def smt_number(value: Fraction) -> str:
    value = Fraction(value)
    mag = abs(value)
    body = str(mag.numerator) if mag.denominator == 1 else f"(/ {mag.numerator} {mag.denominator})"
    return f"(- {body})" if value < 0 else body


def to_smt(term: Term) -> str:
    if isinstance(term, Var):
        return term.name
    if isinstance(term, Const):
        return smt_number(term.value)
    if term.op == "and" and not term.args:
        return "true"
    if term.op == "or" and not term.args:
        return "false"
    if term.op in ("and", "or", "+", "*") and len(term.args) == 1:
        return to_smt(term.args[0])
    return "(" + " ".join([term.op] + [to_smt(a) for a in term.args]) + ")"


_PRETTY = {">=": "≥", "<=": "≤", "and": "∧", "or": "∨"}


def pretty(term: Term) -> str:
    """Infix rendering for reports and DOT labels."""
    if isinstance(term, Var):
        return term.name
    if isinstance(term, Const):
        v = term.value
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    op, args = term.op, term.args
    if op == "not":
        return f"¬({pretty(args[0])})"
    if op in ("and", "or"):
        if not args:
            return "⊤" if op == "and" else "⊥"
        return f" {_PRETTY[op]} ".join(_wrap(a) for a in args)
    if op == "-" and len(args) == 1:
        return f"-{_wrap(args[0])}"
    sym = _PRETTY.get(op, op)
    return f" {sym} ".join(_wrap(a) for a in args)


def _wrap(t: Term) -> str:
    s = pretty(t)
    if isinstance(t, App) and len(t.args) > 1:
        return f"({s})"
    return s


# -- named constraint sets ---------------------------------------------------

@dataclass(frozen=True)
class NamedAtom:
    name: str
    formula: Term
    partition: str = "misc"


@dataclass(frozen=True)
class ConstraintSet:
    """Ordered, uniquely named conjunction of atoms."""

    atoms: tuple = ()
    _names: frozenset = field(default=frozenset(), compare=False, repr=False)

    def __post_init__(self):
        names = [a.name for a in self.atoms]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate atom names: {dup}")
        object.__setattr__(self, "_names", frozenset(names))

    def __len__(self) -> int:
        return len(self.atoms)

    def __iter__(self) -> Iterator[NamedAtom]:
        return iter(self.atoms)

    def __contains__(self, name: str) -> bool:
        return name in self._names

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.atoms]

    def extend(self, atoms: Iterable[NamedAtom]) -> "ConstraintSet":
        return ConstraintSet(self.atoms + tuple(atoms))

    def only(self, names: Iterable[str]) -> "ConstraintSet":
        keep = set(names)
        return ConstraintSet(tuple(a for a in self.atoms if a.name in keep))

    def partition(self, label: str) -> list[NamedAtom]:
        return [a for a in self.atoms if a.partition == label]

    def variables(self) -> list[str]:
        out: set[str] = set()
        for a in self.atoms:
            out |= free_vars(a.formula)
        return sorted(out)

    def holds(self, env: Mapping[str, Fraction]) -> bool:
        return all(evaluate(a.formula, env) for a in self.atoms)

    def violated(self, env: Mapping[str, Fraction]) -> list[str]:
        return [a.name for a in self.atoms if not evaluate(a.formula, env)]

    def to_smtlib(self, logic: str = "QF_NRA", timeout_ms: int | None = None, seed: int = 0) -> str:
        lines = [
            "(set-option :produce-models true)",
            "(set-option :produce-unsat-cores true)",
            f"(set-option :random-seed {seed})",
        ]
        if timeout_ms:
            lines.append(f"(set-option :timeout {int(timeout_ms)})")
        lines.append(f"(set-logic {logic})")
        for v in self.variables():
            lines.append(f"(declare-const {v} Real)")
        for a in self.atoms:
            lines.append(f"(assert (! {to_smt(a.formula)} :named {a.name}))")
        lines.append("(check-sat)")
        return "\n".join(lines) + "\n"
