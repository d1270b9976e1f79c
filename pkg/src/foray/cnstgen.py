"""Compile attack sketches to named constraint sets.

Balances are step-indexed variables ``TOKEN@ADDR@t`` (t = 0 is the initial
state, one step per operation). A market's reserves are simply the market's
own balances, so pool pricing reads the same variables the transfers write.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from . import logic
from .afl import AttackSketch, Borrow, Burn, Hole, Mint, Payback, Swap, Transfer, loan_pairs
from .goal import And, Arith, Cmp, Num, balance_refs, to_formula
from .logic import ConstraintSet, NamedAtom, Var

INITIAL = "initial-state"
GOAL = "goal"
KB = "knowledge-base"


class MissingMarketModel(KeyError):
    def __init__(self, name: str, kind: str = "market"):
        super().__init__(name)
        self.name = name
        self.kind = kind

    def __str__(self):
        return f"no {self.kind} model for {self.name!r}"


def step_partition(k: int) -> str:
    return f"op-step {k}"


def bal_var(token: str, addr: str, t: int) -> Var:
    return Var(f"{token}@{addr}@{t}")


def parse_bal_var(name: str):
    """``MU@attacker@3`` -> ("MU", "attacker", 3); None for holes and other names."""
    parts = name.split("@")
    if len(parts) != 3 or not parts[2].isdigit():
        return None
    return parts[0], parts[1], int(parts[2])


@dataclass(frozen=True)
class ConstantProduct:
    token0: str
    token1: str
    fee: Fraction = Fraction(0)


@dataclass(frozen=True)
class LinearQuote:
    token_in: str
    token_out: str
    pool: str | None = None  # price R_out/R_in read from this pool's balances
    rate: Fraction | None = None


@dataclass(frozen=True)
class LoanModel:
    token: str
    fee: Fraction = Fraction(0)


@dataclass(frozen=True)
class MarketModel:
    markets: dict = field(default_factory=dict)
    lenders: dict = field(default_factory=dict)

    @classmethod
    def from_state(cls, s0) -> "MarketModel":
        markets: dict = {}
        for pid, p in s0.pools.items():
            markets[pid] = ConstantProduct(p.token0, p.token1, Fraction(p.fee))
        for bid, b in s0.banks.items():
            markets[bid] = LinearQuote(b.token_in, b.token_out, b.quote_pool, b.rate)
        lenders = {lid: LoanModel(l.token, Fraction(l.fee)) for lid, l in s0.lenders.items()}
        return cls(markets, lenders)


def _num(x) -> logic.Term:
    if isinstance(x, Hole):
        return Var(x.name)
    return logic.Const(Fraction(x))


def _moves(op, attacker: str) -> list:
    """(token, address, signed amount term) for every balance the operation changes."""
    if isinstance(op, Transfer):
        x = _num(op.amt)
        return [(op.token, op.src, -1, x), (op.token, op.dst, 1, x)]
    if isinstance(op, Mint):
        return [(op.token, op.to, 1, _num(op.amt))]
    if isinstance(op, Burn):
        return [(op.token, op.src, -1, _num(op.amt))]
    if isinstance(op, Swap):
        x, y = _num(op.amt_in), _num(op.min_out)
        return [
            (op.src_token, attacker, -1, x),
            (op.src_token, op.market, 1, x),
            (op.tgt_token, op.market, -1, y),
            (op.tgt_token, op.to, 1, y),
        ]
    if isinstance(op, Borrow):
        x = _num(op.amt)
        return [(op.token, op.lender, -1, x), (op.token, attacker, 1, x)]
    if isinstance(op, Payback):
        y = _num(op.amt)
        return [(op.token, attacker, -1, y), (op.token, op.lender, 1, y)]
    raise TypeError(op)


def op_addresses(op, attacker: str) -> set:
    return {a for _, a, _, _ in _moves(op, attacker)}


def op_tokens(op) -> set:
    return {t for t, _, _, _ in _moves(op, "_")}


def universe(s0, sk: AttackSketch, goal=None) -> tuple:
    """Sorted token and address lists every step is framed over."""
    tokens = set(s0.tokens)
    addrs = set(s0.addresses) | {s0.attacker}
    for op in sk.ops:
        tokens |= op_tokens(op)
        addrs |= op_addresses(op, s0.attacker)
    if goal is not None:
        for b in balance_refs(goal):
            tokens.add(b.token)
            addrs.add(b.addr)
    return sorted(tokens), sorted(addrs)


def compile_op(op, t: int, mm: MarketModel, *, tokens, addrs, attacker: str = "attacker",
               borrow_amount=None) -> list:
    """Atoms relating step ``t-1`` to step ``t`` for one operation (``t`` is 1-based)."""
    part = step_partition(t)
    atoms = []
    prev = t - 1

    net: dict = {}
    for token, addr, sign, x in _moves(op, attacker):
        net.setdefault((token, addr), []).append(x if sign > 0 else logic.App("-", (x,)))
    for token in tokens:
        for addr in addrs:
            before, after = bal_var(token, addr, prev), bal_var(token, addr, t)
            if (token, addr) in net:
                name = f"op{t}.move.{token}.{addr}"
                atoms.append(NamedAtom(name, logic.eq(after, logic.add(before, *net[(token, addr)])), part))
            else:
                atoms.append(NamedAtom(f"op{t}.frame.{token}.{addr}", logic.eq(after, before), part))
    for token in tokens:
        for addr in addrs:
            atoms.append(NamedAtom(f"op{t}.nonneg.{token}.{addr}", logic.ge(bal_var(token, addr, t), 0), part))

    if isinstance(op, Swap):
        model = mm.markets.get(op.market)
        if model is None:
            raise MissingMarketModel(op.market)
        x, y = _num(op.amt_in), _num(op.min_out)
        if isinstance(model, ConstantProduct):
            if {op.src_token, op.tgt_token} != {model.token0, model.token1}:
                raise MissingMarketModel(f"{op.market}:{op.src_token}->{op.tgt_token}")
            r_u = bal_var(op.src_token, op.market, prev)
            r_v = bal_var(op.tgt_token, op.market, prev)
            x_f = logic.mul(x, logic.Const(1 - model.fee))
            rho = logic.eq(logic.mul(logic.add(r_u, x_f), logic.sub(r_v, y)), logic.mul(r_u, r_v))
        else:
            if (op.src_token, op.tgt_token) != (model.token_in, model.token_out):
                raise MissingMarketModel(f"{op.market}:{op.src_token}->{op.tgt_token}")
            if model.rate is not None:
                rho = logic.eq(y, logic.mul(x, logic.Const(model.rate)))
            else:
                r_in = bal_var(model.token_in, model.pool, prev)
                r_out = bal_var(model.token_out, model.pool, prev)
                rho = logic.eq(logic.mul(y, r_in), logic.mul(x, r_out))
        atoms.append(NamedAtom(f"op{t}.rho", rho, part))
    elif isinstance(op, (Borrow, Payback)):
        loan = mm.lenders.get(op.lender)
        if loan is None or loan.token != op.token:
            raise MissingMarketModel(op.lender, "lender")
        if isinstance(op, Payback):
            if borrow_amount is None:
                raise MissingMarketModel(op.lender, "matching borrow for")
            theta = logic.eq(_num(op.amt), logic.mul(borrow_amount, logic.Const(1 + loan.fee)))
            atoms.append(NamedAtom(f"op{t}.theta", theta, part))

    from .afl import op_holes

    for h in op_holes(op):
        atoms.append(NamedAtom(f"op{t}.hole.{h.name}", logic.ge(Var(h.name), 0), part))
    return atoms


def initial_atoms(s0, tokens, addrs) -> list:
    return [
        NamedAtom(f"s0.{token}.{addr}", logic.eq(bal_var(token, addr, 0), s0.balance(token, addr)), INITIAL)
        for token in tokens
        for addr in addrs
    ]


def unit_gap(goal):
    """Read each positive strict comparison ``a < b`` as ``b >= a + 1``.

    Completed programs move whole base units, so a strict gain is at least one
    unit; asking the relaxed solver for that unit leaves room for rounding.
    Comparisons under a negation are left alone.
    """
    if isinstance(goal, Cmp) and goal.op == "<":
        return Cmp(">=", goal.right, Arith("+", goal.left, Num(Fraction(1))))
    if isinstance(goal, And):
        return And(tuple(unit_gap(a) for a in goal.args))
    return goal


def goal_atom(goal, n: int) -> NamedAtom:
    def var(b):
        return bal_var(b.token, b.addr, 0 if b.epoch == "start" else n)

    return NamedAtom("goal", to_formula(unit_gap(goal), var), GOAL)


def compile_sketch(s0, sk: AttackSketch, goal, kappa=(), mm: MarketModel | None = None) -> ConstraintSet:
    """S₀ equalities, one block per operation, the goal over steps 0 and n, then κ."""
    mm = mm or MarketModel.from_state(s0)
    tokens, addrs = universe(s0, sk, goal)
    atoms = initial_atoms(s0, tokens, addrs)
    pairs = loan_pairs(sk.ops)
    for k, op in enumerate(sk.ops, start=1):
        borrow_amount = None
        if isinstance(op, Payback) and (k - 1) in pairs:
            borrow_amount = _num(sk.ops[pairs[k - 1]].amt)
        atoms += compile_op(op, k, mm, tokens=tokens, addrs=addrs, attacker=s0.attacker,
                            borrow_amount=borrow_amount)
    atoms.append(goal_atom(goal, len(sk.ops)))
    for clause in kappa:
        atoms.append(NamedAtom(clause.name, clause.formula, KB))
    return ConstraintSet(tuple(atoms))


def count_by_partition(cs: ConstraintSet) -> dict:
    out: dict = {}
    for a in cs:
        key = "op-step" if a.partition.startswith("op-step") else a.partition
        out[key] = out.get(key, 0) + 1
    return out
