"""Abstract financial language: operators, sketches with holes, programs."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from typing import Mapping, Union


class AflError(Exception):
    pass


class UnpairedBorrow(AflError):
    pass


class UnmatchedPayback(AflError):
    pass


class UnboundHole(AflError, KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"UnboundHole({self.name!r})"


class InvariantViolation(AflError):
    pass


class AflSyntaxError(AflError):
    pass


@dataclass(frozen=True, order=True)
class Hole:
    name: str

    def __str__(self):
        return f"?{self.name}"


Amount = Union[Hole, Fraction]


def _amount_str(v) -> str:
    if isinstance(v, Hole):
        return str(v)
    v = Fraction(v)
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


@dataclass(frozen=True)
class Transfer:
    token: str
    src: str
    dst: str
    amt: Amount


@dataclass(frozen=True)
class Burn:
    token: str
    src: str
    amt: Amount


@dataclass(frozen=True)
class Mint:
    token: str
    to: str
    amt: Amount


@dataclass(frozen=True)
class Swap:
    market: str
    src_token: str
    tgt_token: str
    amt_in: Amount
    min_out: Amount
    to: str

    def __post_init__(self):
        if self.src_token == self.tgt_token:
            raise InvariantViolation(f"swap on {self.market} has identical tokens {self.src_token}")


@dataclass(frozen=True)
class Borrow:
    lender: str
    token: str
    amt: Amount


@dataclass(frozen=True)
class Payback:
    lender: str
    token: str
    amt: Amount


AflOp = Union[Transfer, Burn, Mint, Swap, Borrow, Payback]
OP_CLASSES = {c.__name__.lower(): c for c in (Transfer, Burn, Mint, Swap, Borrow, Payback)}

# surface keywords per field, in grammar order
_KEYS = {
    Transfer: (("token", "token"), ("src", "from"), ("dst", "to"), ("amt", "amt")),
    Burn: (("token", "token"), ("src", "from"), ("amt", "amt")),
    Mint: (("token", "token"), ("to", "to"), ("amt", "amt")),
    Swap: (("market", "market"), ("src_token", "src"), ("tgt_token", "tgt"), ("amt_in", "in"),
           ("min_out", "minout"), ("to", "to")),
    Borrow: (("lender", "lender"), ("token", "token"), ("amt", "amt")),
    Payback: (("lender", "lender"), ("token", "token"), ("amt", "amt")),
}
_AMOUNT_FIELDS = {"amt", "amt_in", "min_out"}


def op_name(op) -> str:
    return type(op).__name__.lower()


def amount_fields(op) -> list[str]:
    return [f.name for f in fields(op) if f.name in _AMOUNT_FIELDS]


def op_holes(op) -> list[Hole]:
    return [getattr(op, k) for k in amount_fields(op) if isinstance(getattr(op, k), Hole)]


def render_op(op) -> str:
    parts = []
    for attr, key in _KEYS[type(op)]:
        v = getattr(op, attr)
        parts.append(f"{key}: {_amount_str(v) if attr in _AMOUNT_FIELDS else v}")
    return f"{op_name(op)}({', '.join(parts)})"


def render(ops) -> str:
    return "".join(render_op(op) + "\n" for op in ops)


_op_line = re.compile(r"^\s*([a-z]+)\((.*)\)\s*$")


def parse_amount(text: str) -> Amount:
    text = text.strip()
    if text.startswith("?"):
        return Hole(text[1:])
    try:
        v = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise AflSyntaxError(f"bad amount {text!r}") from None
    return v


def parse_op(line: str):
    m = _op_line.match(line)
    if not m or m.group(1) not in OP_CLASSES:
        raise AflSyntaxError(f"cannot parse operation {line.strip()!r}")
    cls = OP_CLASSES[m.group(1)]
    given = {}
    for chunk in m.group(2).split(","):
        key, sep, val = chunk.partition(":")
        if not sep:
            raise AflSyntaxError(f"expected 'key: value' in {chunk.strip()!r}")
        given[key.strip()] = val.strip()
    kw = {}
    for attr, key in _KEYS[cls]:
        if key not in given:
            raise AflSyntaxError(f"{m.group(1)} is missing field {key!r}")
        kw[attr] = parse_amount(given.pop(key)) if attr in _AMOUNT_FIELDS else given.pop(key)
    if given:
        raise AflSyntaxError(f"{m.group(1)} has unknown fields {sorted(given)}")
    return cls(**kw)


def parse_ops(text: str) -> tuple:
    ops = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        if line.strip():
            ops.append(parse_op(line))
    return tuple(ops)


def check_pairing(ops) -> None:
    """Borrow/payback must nest like brackets on (lender, token)."""
    stack = []
    for i, op in enumerate(ops):
        if isinstance(op, Borrow):
            stack.append((op.lender, op.token, i))
        elif isinstance(op, Payback):
            if not stack or stack[-1][:2] != (op.lender, op.token):
                raise UnmatchedPayback(f"payback at op {i + 1} to {op.lender} has no open borrow")
            stack.pop()
    if stack:
        lender, token, i = stack[-1]
        raise UnpairedBorrow(f"borrow of {token} from {lender} at op {i + 1} is never paid back")


def loan_pairs(ops) -> dict:
    """Map payback index -> matching borrow index."""
    stack, out = [], {}
    for i, op in enumerate(ops):
        if isinstance(op, Borrow):
            stack.append(i)
        elif isinstance(op, Payback) and stack:
            out[i] = stack.pop()
    return out


@dataclass(frozen=True)
class AttackSketch:
    ops: tuple
    source_path: tuple = ()

    def __post_init__(self):
        check_pairing(self.ops)

    @property
    def holes(self) -> tuple:
        return tuple(h.name for op in self.ops for h in op_holes(op))

    def holes_upto(self, k: int) -> tuple:
        """Holes of the first ``k`` operations."""
        return tuple(h.name for op in self.ops[:k] for h in op_holes(op))

    def render(self) -> str:
        return render(self.ops)

    def __len__(self):
        return len(self.ops)


@dataclass(frozen=True)
class AttackProgram:
    ops: tuple
    binding: tuple = ()  # sorted (hole, value) pairs

    def __post_init__(self):
        for op in self.ops:
            if op_holes(op):
                raise InvariantViolation(f"program still has holes in {render_op(op)}")

    def render(self) -> str:
        return render(self.ops)

    def to_dict(self) -> dict:
        return {
            "ops": [render_op(op) for op in self.ops],
            "binding": {k: _amount_str(v) for k, v in self.binding},
        }

    def __len__(self):
        return len(self.ops)


def parse_program(text: str) -> AttackProgram:
    return AttackProgram(parse_ops(text))


def sketch_from_path(path, hole_prefix: str = "h") -> AttackSketch:
    """One operator per edge; every amount becomes a fresh hole numbered in path order."""
    counter = iter(range(1, 10**9))

    def hole() -> Hole:
        return Hole(f"{hole_prefix}{next(counter)}")

    ops = []
    for e in path:
        if e.op == "swap":
            ops.append(Swap(e.actor, e.src, e.dst, hole(), hole(), e.address))
        elif e.op == "borrow":
            ops.append(Borrow(e.actor, e.dst, hole()))
        elif e.op == "payback":
            ops.append(Payback(e.actor, e.src, hole()))
        elif e.op == "mint":
            ops.append(Mint(e.dst, e.address, hole()))
        elif e.op == "burn":
            ops.append(Burn(e.src, e.address, hole()))
        else:
            ops.append(Transfer(e.src, e.address, e.counterparty, hole()))
    return AttackSketch(tuple(ops), tuple(e.id for e in path))


def complete(sketch: AttackSketch, model: Mapping) -> AttackProgram:
    """Substitute model values for holes, rounded to whole base units.

    The constraint model is over reals. Payback amounts round up so the loan
    stays covered; every other amount rounds down, which keeps spends within
    balance and ``min_out`` below the floored swap output.
    """
    values = model if isinstance(model, Mapping) else model.values
    ops, used = [], {}
    for op in sketch.ops:
        changes = {}
        for k in amount_fields(op):
            v = getattr(op, k)
            if isinstance(v, Hole):
                if v.name not in values:
                    raise UnboundHole(v.name)
                val = Fraction(values[v.name])
                if val < 0:
                    raise InvariantViolation(f"hole {v.name} bound to negative {val}")
                val = Fraction(math.ceil(val) if isinstance(op, Payback) else math.floor(val))
                used[v.name] = val
                changes[k] = val
        ops.append(replace(op, **changes) if changes else op)
    return AttackProgram(tuple(ops), tuple(sorted(used.items())))
