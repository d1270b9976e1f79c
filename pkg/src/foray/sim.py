"""Concrete DeFi environment and AFL interpreter.

A program executes as one transaction: the first failing operation, or a
flash loan still open at the end, reverts everything and hands back the
initial state object untouched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .afl import AttackProgram, Borrow, Burn, Mint, Payback, Swap, Transfer, render_op


class InvalidState(ValueError):
    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class Pool:
    token0: str
    token1: str
    fee: Fraction = Fraction(0)

    def other(self, token: str) -> str:
        return self.token1 if token == self.token0 else self.token0

    @property
    def tokens(self) -> tuple:
        return (self.token0, self.token1)


@dataclass(frozen=True)
class Bank:
    """Sells ``token_out`` for ``token_in`` at a quoted price.

    The quote is either a fixed ``rate`` (out per in) or read from the
    reserves of ``quote_pool`` as R_out / R_in.
    """

    token_in: str
    token_out: str
    quote_pool: str | None = None
    rate: Fraction | None = None


@dataclass(frozen=True)
class Lender:
    token: str
    fee: Fraction = Fraction(0)


@dataclass(frozen=True, eq=True)
class ChainState:
    balances: Mapping = field(default_factory=dict)  # (token, address) -> Fraction
    pools: Mapping = field(default_factory=dict)
    banks: Mapping = field(default_factory=dict)
    lenders: Mapping = field(default_factory=dict)
    attacker: str = "attacker"

    def __post_init__(self):
        for key, v in self.balances.items():
            if v < 0:
                raise InvalidState(f"negative balance {v} for {key[0]} at {key[1]}")
        for pid, pool in self.pools.items():
            if not 0 <= pool.fee < 1:
                raise InvalidState(f"pool {pid} fee {pool.fee} outside [0, 1)")
        for lid, lender in self.lenders.items():
            if not 0 <= lender.fee < 1:
                raise InvalidState(f"lender {lid} fee {lender.fee} outside [0, 1)")
        for bid, bank in self.banks.items():
            if bank.quote_pool is not None and bank.quote_pool not in self.pools:
                raise InvalidState(f"bank {bid} quotes from unknown pool {bank.quote_pool}")

    def balance(self, token: str, addr: str) -> Fraction:
        return self.balances.get((token, addr), Fraction(0))

    def reserves(self, pool_id: str) -> tuple:
        pool = self.pools[pool_id]
        return self.balance(pool.token0, pool_id), self.balance(pool.token1, pool_id)

    @property
    def tokens(self) -> list[str]:
        seen = {t for t, _ in self.balances}
        for p in self.pools.values():
            seen.update(p.tokens)
        for b in self.banks.values():
            seen.update((b.token_in, b.token_out))
        for l in self.lenders.values():
            seen.add(l.token)
        return sorted(seen)

    @property
    def addresses(self) -> list[str]:
        seen = {a for _, a in self.balances} | {self.attacker}
        seen |= set(self.pools) | set(self.banks) | set(self.lenders)
        return sorted(seen)

    def markets(self) -> list[str]:
        return sorted(set(self.pools) | set(self.banks))

    def with_balances(self, balances: Mapping) -> "ChainState":
        return ChainState(dict(balances), self.pools, self.banks, self.lenders, self.attacker)

    def to_dict(self) -> dict:
        return {
            "attacker": self.attacker,
            "balances": [
                {"token": t, "address": a, "amount": _num(v)}
                for (t, a), v in sorted(self.balances.items())
            ],
        }


def _num(v: Fraction) -> str:
    v = Fraction(v)
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def _fraction(text: str, line: int) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise InvalidState(f"bad number {text!r}", line) from None


def load_state(text: str) -> ChainState:
    """Read the ``.state`` format (see docs/state-format.md)."""
    balances: dict = {}
    pools, banks, lenders = {}, {}, {}
    attacker = "attacker"
    for no, raw in enumerate(text.splitlines(), start=1):
        words = raw.split("#", 1)[0].split()
        if not words:
            continue
        head = words[0]
        try:
            if head == "attacker" and len(words) == 2:
                attacker = words[1]
            elif head == "balance" and len(words) == 4:
                _, addr, token, amount = words
                v = _fraction(amount, no)
                if v < 0:
                    raise InvalidState(f"negative balance {amount} for {token} at {addr}", no)
                if (token, addr) in balances:
                    raise InvalidState(f"balance of {token} at {addr} given twice", no)
                balances[(token, addr)] = v
            elif head == "pool" and len(words) == 6 and words[4] == "fee":
                _, pid, t0, t1, _, fee = words
                if t0 == t1:
                    raise InvalidState(f"pool {pid} needs two distinct tokens", no)
                pools[pid] = Pool(t0, t1, _fraction(fee, no))
            elif head == "bank" and len(words) == 9 and words[2] == "sells" and words[4] == "for":
                _, bid, _, tout, _, tin, _, kind, ref = words
                if words[6] != "quote" or kind not in ("pool", "rate"):
                    raise InvalidState("bank quote must be 'quote pool P' or 'quote rate R'", no)
                if kind == "pool":
                    banks[bid] = Bank(tin, tout, quote_pool=ref)
                else:
                    banks[bid] = Bank(tin, tout, rate=_fraction(ref, no))
            elif head == "lender" and len(words) == 5 and words[3] == "fee":
                _, lid, token, _, fee = words
                lenders[lid] = Lender(token, _fraction(fee, no))
            else:
                raise InvalidState(f"cannot read {raw.strip()!r}", no)
        except InvalidState as exc:
            if not exc.line:
                raise InvalidState(str(exc), no) from None
            raise
    return ChainState(balances, pools, banks, lenders, attacker)


def load_state_file(path) -> ChainState:
    with open(path, encoding="utf-8") as fh:
        return load_state(fh.read())


def dump_state(s: ChainState) -> str:
    out = [f"attacker {s.attacker}"]
    for pid, p in sorted(s.pools.items()):
        out.append(f"pool {pid} {p.token0} {p.token1} fee {_num(p.fee)}")
    for bid, b in sorted(s.banks.items()):
        quote = f"pool {b.quote_pool}" if b.quote_pool is not None else f"rate {_num(b.rate)}"
        out.append(f"bank {bid} sells {b.token_out} for {b.token_in} quote {quote}")
    for lid, l in sorted(s.lenders.items()):
        out.append(f"lender {lid} {l.token} fee {_num(l.fee)}")
    for (t, a), v in sorted(s.balances.items()):
        out.append(f"balance {a} {t} {_num(v)}")
    return "\n".join(out) + "\n"


# -- execution ------------------------------------------------------------------------

@dataclass(frozen=True)
class Revert:
    reason: str
    op_index: int  # 1-based; len(program) + 1 for end-of-transaction checks
    detail: str = ""

    def __str__(self):
        return f"{self.reason} at op {self.op_index}" + (f": {self.detail}" if self.detail else "")


class _Abort(Exception):
    def __init__(self, reason: str, detail: str):
        super().__init__(detail)
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class StepTrace:
    index: int
    op: str
    deltas: tuple  # ((token, address, delta), ...) sorted

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "op": self.op,
            "deltas": [{"token": t, "address": a, "delta": _num(d)} for t, a, d in self.deltas],
        }


@dataclass(frozen=True)
class ExecutionTrace:
    steps: tuple = ()
    revert: Revert | None = None

    @property
    def reverted(self) -> bool:
        return self.revert is not None

    def to_dict(self) -> dict:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "revert": None
            if self.revert is None
            else {"reason": self.revert.reason, "op": self.revert.op_index, "detail": self.revert.detail},
        }


class _Ledger:
    def __init__(self, s0: ChainState):
        self.s0 = s0
        self.bal = dict(s0.balances)
        self.delta: dict = {}

    def get(self, token, addr) -> Fraction:
        return self.bal.get((token, addr), Fraction(0))

    def move(self, token, src, dst, amount):
        amount = Fraction(amount)
        if amount < 0:
            raise _Abort("NegativeAmount", f"{amount} {token}")
        if amount == 0:
            return
        if src is not None:
            have = self.get(token, src)
            if have < amount:
                raise _Abort("InsufficientBalance", f"{src} holds {_num(have)} {token}, needs {_num(amount)}")
            self.bal[(token, src)] = have - amount
            self.delta[(token, src)] = self.delta.get((token, src), 0) - amount
        if dst is not None:
            self.bal[(token, dst)] = self.get(token, dst) + amount
            self.delta[(token, dst)] = self.delta.get((token, dst), 0) + amount

    def flush(self) -> tuple:
        out = tuple(sorted((t, a, Fraction(d)) for (t, a), d in self.delta.items() if d != 0))
        self.delta = {}
        return out


def swap_output(r_in, r_out, amount_in, fee) -> Fraction:
    """Constant-product output, floored to a whole base unit."""
    x_f = Fraction(amount_in) * (1 - Fraction(fee))
    if r_in + x_f == 0:
        return Fraction(0)
    return Fraction(math.floor(Fraction(r_out) * x_f / (Fraction(r_in) + x_f)))


def bank_quote(s_bal: _Ledger, s: ChainState, bank: Bank) -> Fraction:
    if bank.rate is not None:
        return Fraction(bank.rate)
    r_in = s_bal.get(bank.token_in, bank.quote_pool)
    r_out = s_bal.get(bank.token_out, bank.quote_pool)
    if r_in == 0:
        raise _Abort("EmptyPool", f"quote pool {bank.quote_pool} has no {bank.token_in}")
    return r_out / r_in


def _step(led: _Ledger, s0: ChainState, op, loans: list):
    me = s0.attacker
    if isinstance(op, Transfer):
        led.move(op.token, op.src, op.dst, op.amt)
    elif isinstance(op, Mint):
        led.move(op.token, None, op.to, op.amt)
    elif isinstance(op, Burn):
        led.move(op.token, op.src, None, op.amt)
    elif isinstance(op, Swap):
        x = Fraction(op.amt_in)
        if op.market in s0.pools:
            pool = s0.pools[op.market]
            if {op.src_token, op.tgt_token} != set(pool.tokens):
                raise _Abort("UnsupportedPair", f"{op.market} trades {pool.token0}/{pool.token1}")
            r_in, r_out = led.get(op.src_token, op.market), led.get(op.tgt_token, op.market)
            if r_in == 0 or r_out == 0:
                raise _Abort("EmptyPool", f"{op.market} has an empty reserve")
            out = swap_output(r_in, r_out, x, pool.fee)
        elif op.market in s0.banks:
            bank = s0.banks[op.market]
            if (op.src_token, op.tgt_token) != (bank.token_in, bank.token_out):
                raise _Abort("UnsupportedPair", f"{op.market} sells {bank.token_out} for {bank.token_in}")
            out = Fraction(math.floor(x * bank_quote(led, s0, bank)))
        else:
            raise _Abort("UnknownMarket", op.market)
        if out < Fraction(op.min_out):
            raise _Abort("Slippage", f"output {_num(out)} below minimum {_num(op.min_out)}")
        led.move(op.src_token, me, op.market, x)
        if led.get(op.tgt_token, op.market) < out:
            raise _Abort("InsufficientLiquidity", f"{op.market} cannot pay {_num(out)} {op.tgt_token}")
        led.move(op.tgt_token, op.market, op.to, out)
    elif isinstance(op, Borrow):
        lender = s0.lenders.get(op.lender)
        if lender is None or lender.token != op.token:
            raise _Abort("UnknownLender", f"{op.lender} does not lend {op.token}")
        if led.get(op.token, op.lender) < Fraction(op.amt):
            raise _Abort("InsufficientLiquidity", f"{op.lender} cannot lend {_num(op.amt)} {op.token}")
        led.move(op.token, op.lender, me, op.amt)
        loans.append((op.lender, op.token, Fraction(op.amt)))
    elif isinstance(op, Payback):
        if not loans or loans[-1][:2] != (op.lender, op.token):
            raise _Abort("UnmatchedPayback", f"no open {op.token} loan from {op.lender}")
        _, _, principal = loans[-1]
        due = principal * (1 + s0.lenders[op.lender].fee)
        if Fraction(op.amt) < due:
            raise _Abort("Underpaid", f"repaid {_num(op.amt)}, owes {_num(due)}")
        led.move(op.token, me, op.lender, op.amt)
        loans.pop()
    else:  # pragma: no cover - closed union
        raise TypeError(op)


@dataclass(frozen=True)
class ExecResult:
    state: ChainState
    trace: ExecutionTrace

    @property
    def reverted(self) -> bool:
        return self.trace.reverted

    @property
    def revert(self) -> Revert | None:
        return self.trace.revert


def execute(p: AttackProgram, s0: ChainState) -> ExecResult:
    """Run ``p`` atomically. On revert ``result.state is s0``."""
    led = _Ledger(s0)
    loans: list = []
    steps = []
    for i, op in enumerate(p.ops, start=1):
        try:
            _step(led, s0, op, loans)
        except _Abort as exc:
            return ExecResult(s0, ExecutionTrace(tuple(steps), Revert(exc.reason, i, exc.detail)))
        steps.append(StepTrace(i, render_op(op), led.flush()))
    if loans:
        lender, token, amount = loans[-1]
        rev = Revert("OpenLoan", len(p.ops) + 1, f"{_num(amount)} {token} from {lender} not repaid")
        return ExecResult(s0, ExecutionTrace(tuple(steps), rev))
    return ExecResult(s0.with_balances(led.bal), ExecutionTrace(tuple(steps)))


@dataclass(frozen=True)
class Verdict:
    passed: bool
    trace: ExecutionTrace
    end: ChainState
    reason: str = ""

    def to_dict(self) -> dict:
        return {"verdict": "pass" if self.passed else "fail", "reason": self.reason, "trace": self.trace.to_dict()}


def validate(p: AttackProgram, s0: ChainState, goal) -> Verdict:
    from .goal import eval_goal

    res = execute(p, s0)
    if res.reverted:
        return Verdict(False, res.trace, res.state, f"Revert: {res.revert}")
    if not eval_goal(goal, s0, res.state):
        return Verdict(False, res.trace, res.state, "GoalNotMet")
    return Verdict(True, res.trace, res.state)


def profit(s0: ChainState, s1: ChainState, token: str) -> Fraction:
    return s1.balance(token, s0.attacker) - s0.balance(token, s0.attacker)
