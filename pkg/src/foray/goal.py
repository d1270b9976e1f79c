"""Attack goals: quantifier-free comparisons over start/end balances.

Text form::

    0 < balance(USDCe, attacker, end) - balance(USDCe, attacker, start)

Atoms compare arithmetic terms with ``=``, ``>=`` or ``<`` (``>`` and ``<=``
are accepted and flipped); atoms combine with ``and``, ``not`` and parentheses.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Union

from . import logic

EPOCHS = ("start", "end")


class GoalSyntaxError(ValueError):
    def __init__(self, message: str, col: int = 0):
        super().__init__(f"col {col}: {message}" if col else message)
        self.col = col


class QuantifiedGoalRejected(GoalSyntaxError):
    pass


class UndeclaredGoalToken(GoalSyntaxError):
    pass


@dataclass(frozen=True)
class Num:
    value: Fraction


@dataclass(frozen=True)
class Bal:
    token: str
    addr: str
    epoch: str


@dataclass(frozen=True)
class Arith:
    op: str  # + - *
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Bal, Arith]


@dataclass(frozen=True)
class Cmp:
    op: str  # = >= <
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Not:
    arg: "Goal"


@dataclass(frozen=True)
class And:
    args: tuple


Goal = Union[Cmp, Not, And]


# -- lexer / parser -----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?(?:/\d+)?)|(?P<op>>=|<=|[=<>+\-*(),.])|(?P<word>[A-Za-z_$][A-Za-z0-9_$.]*))"
)


def _lex(text: str) -> list:
    out, i = [], 0
    text = text.rstrip()
    while i < len(text):
        m = _TOKEN.match(text, i)
        if not m or m.end() == i:
            raise GoalSyntaxError(f"unexpected character {text[i]!r}", i + 1)
        kind = m.lastgroup
        val = m.group(kind)
        out.append((kind, val, m.start(kind) + 1))
        i = m.end()
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _lex(text)
        for kind, val, col in self.toks:
            if kind == "word" and val in ("exists", "forall"):
                raise QuantifiedGoalRejected(f"quantifier {val!r} not supported", col)
        self.i = 0

    def peek(self, k: int = 0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else ("eof", "", 0)

    def take(self, val: str | None = None):
        tok = self.peek()
        if val is not None and tok[1] != val:
            raise GoalSyntaxError(f"expected {val!r}, got {tok[1] or 'end of input'!r}", tok[2])
        if tok[0] == "eof":
            raise GoalSyntaxError("unexpected end of input")
        self.i += 1
        return tok

    def parse(self) -> Goal:
        g = self.conj()
        if self.peek()[0] != "eof":
            tok = self.peek()
            raise GoalSyntaxError(f"trailing input {tok[1]!r}", tok[2])
        return g

    def conj(self) -> Goal:
        args = [self.unary()]
        while self.peek()[1] == "and":
            self.take()
            args.append(self.unary())
        return args[0] if len(args) == 1 else And(tuple(args))

    def unary(self) -> Goal:
        if self.peek()[1] == "not":
            self.take()
            return Not(self.unary())
        if self.peek()[1] == "(":
            # either a parenthesised goal or the start of an arithmetic term
            save = self.i
            try:
                self.take("(")
                g = self.conj()
                self.take(")")
                if self.peek()[1] in ("=", ">=", "<=", "<", ">", "+", "-", "*"):
                    raise GoalSyntaxError("term")
                return g
            except GoalSyntaxError:
                self.i = save
        return self.cmp()

    def cmp(self) -> Goal:
        left = self.expr()
        kind, op, col = self.take()
        if op not in ("=", ">=", "<=", "<", ">"):
            raise GoalSyntaxError(f"expected comparison, got {op!r}", col)
        right = self.expr()
        if op == ">":
            return Cmp("<", right, left)
        if op == "<=":
            return Cmp(">=", right, left)
        return Cmp(op, left, right)

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            e = Arith(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] == "*":
            self.take()
            e = Arith("*", e, self.factor())
        return e

    def factor(self) -> Expr:
        kind, val, col = self.peek()
        if kind == "num":
            self.take()
            return Num(Fraction(val))
        if val == "-" and self.peek(1)[0] == "num":
            self.take()
            return Num(-Fraction(self.take()[1]))
        if val == "(":
            self.take()
            e = self.expr()
            self.take(")")
            return e
        if kind == "word" and val == "balance":
            self.take()
            self.take("(")
            token = self._word()
            self.take(",")
            addr = self._word()
            self.take(",")
            epoch = self._word()
            if epoch not in EPOCHS:
                raise GoalSyntaxError(f"epoch must be start or end, got {epoch!r}", col)
            self.take(")")
            return Bal(token, addr, epoch)
        raise GoalSyntaxError(f"unexpected {val or 'end of input'!r}", col)

    def _word(self) -> str:
        kind, val, col = self.take()
        if kind != "word":
            raise GoalSyntaxError(f"expected a name, got {val!r}", col)
        return val


def parse_goal(text: str, protocol=None) -> Goal:
    """Parse goal text; with ``protocol`` token names are matched case-insensitively."""
    g = _Parser(text).parse()
    if protocol is not None:
        g = resolve_tokens(g, protocol)
    return g


def resolve_tokens(g, protocol):
    by_lower = {t.lower(): t for t in protocol.token_ids}

    def fix(node):
        if isinstance(node, Bal):
            tok = node.token if node.token in protocol.token_ids else by_lower.get(node.token.lower())
            if tok is None:
                raise UndeclaredGoalToken(f"goal mentions undeclared token {node.token!r}")
            addr = protocol.attacker if node.addr in ("attacker", "caller") else node.addr
            return Bal(tok, addr, node.epoch)
        if isinstance(node, Arith):
            return Arith(node.op, fix(node.left), fix(node.right))
        if isinstance(node, Cmp):
            return Cmp(node.op, fix(node.left), fix(node.right))
        if isinstance(node, Not):
            return Not(fix(node.arg))
        if isinstance(node, And):
            return And(tuple(fix(a) for a in node.args))
        return node

    return fix(g)


# -- rendering ------------------------------------------------------------------------

def _num(v: Fraction) -> str:
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def render_expr(e: Expr) -> str:
    if isinstance(e, Num):
        return _num(e.value)
    if isinstance(e, Bal):
        return f"balance({e.token}, {e.addr}, {e.epoch})"

    def wrap(x):
        return f"({render_expr(x)})" if isinstance(x, Arith) else render_expr(x)

    return f"{wrap(e.left)} {e.op} {wrap(e.right)}"


def render_goal(g: Goal) -> str:
    if isinstance(g, Cmp):
        return f"{render_expr(g.left)} {g.op} {render_expr(g.right)}"
    if isinstance(g, Not):
        inner = render_goal(g.arg)
        return f"not ({inner})" if isinstance(g.arg, And) else f"not {inner}"
    return " and ".join(f"({render_goal(a)})" if isinstance(a, And) else render_goal(a) for a in g.args)


# -- semantics ------------------------------------------------------------------------

def target_tokens(g) -> frozenset:
    if isinstance(g, Bal):
        return frozenset((g.token,))
    if isinstance(g, Num):
        return frozenset()
    if isinstance(g, (Arith, Cmp)):
        return target_tokens(g.left) | target_tokens(g.right)
    if isinstance(g, Not):
        return target_tokens(g.arg)
    return frozenset().union(*(target_tokens(a) for a in g.args))


def balance_refs(g) -> list:
    if isinstance(g, Bal):
        return [g]
    if isinstance(g, Num):
        return []
    if isinstance(g, (Arith, Cmp)):
        return balance_refs(g.left) + balance_refs(g.right)
    if isinstance(g, Not):
        return balance_refs(g.arg)
    return [b for a in g.args for b in balance_refs(a)]


def to_formula(g, var: Callable[[Bal], logic.Term]) -> logic.Term:
    """Translate to a solver formula, mapping each balance reference through ``var``."""

    def ex(e):
        if isinstance(e, Num):
            return logic.Const(e.value)
        if isinstance(e, Bal):
            return var(e)
        fn = {"+": logic.add, "-": logic.sub, "*": logic.mul}[e.op]
        return fn(ex(e.left), ex(e.right))

    if isinstance(g, Cmp):
        fn = {"=": logic.eq, ">=": logic.ge, "<": logic.lt}[g.op]
        return fn(ex(g.left), ex(g.right))
    if isinstance(g, Not):
        return logic.not_(to_formula(g.arg, var))
    return logic.and_(*(to_formula(a, var) for a in g.args))


def eval_goal(g, start, end) -> bool:
    """Evaluate over two chain states; absent balances count as zero."""

    def var(b: Bal):
        st = start if b.epoch == "start" else end
        return logic.Const(st.balance(b.token, b.addr))

    return bool(logic.evaluate(to_formula(g, var), {}))


def profit_goal(token: str, attacker: str = "attacker") -> Goal:
    return Cmp(
        "<",
        Num(Fraction(0)),
        Arith("-", Bal(token, attacker, "end"), Bal(token, attacker, "start")),
    )


def generate_goals(p) -> list:
    """One strict-profit goal per stablecoin, in token declaration order."""
    return [profit_goal(t.id, p.attacker) for t in p.tokens if t.is_stablecoin]


__all__ = [
    "And", "Arith", "Bal", "Cmp", "Goal", "GoalSyntaxError", "Not", "Num",
    "QuantifiedGoalRejected", "UndeclaredGoalToken", "balance_refs", "eval_goal",
    "generate_goals", "parse_goal", "profit_goal", "render_goal", "target_tokens", "to_formula",
]
