from __future__ import annotations

from dataclasses import KW_ONLY, dataclass, field
from typing import Iterator

ATTACKER_ALIASES = ("caller", "msg.sender")
DEAD = "•"
PARAM_KINDS = ("amount", "address", "token")


class IRError(Exception):
    """Base class for protocol IR failures; carries a source position."""

    kind = "IRError"

    def __init__(self, message: str, line: int = 0, col: int = 0, stmt_id: int | None = None):
        loc = f"{line}:{col}: " if line else ""
        super().__init__(loc + message)
        self.message = message
        self.line = line
        self.col = col
        self.stmt_id = stmt_id


class ParseError(IRError):
    kind = "ParseError"


class DuplicateIdentifier(IRError):
    kind = "DuplicateIdentifier"


class DuplicateFunction(DuplicateIdentifier):
    kind = "DuplicateFunction"


class UndeclaredToken(IRError):
    kind = "UndeclaredToken"

    def __init__(self, name: str, line: int = 0, col: int = 0, stmt_id: int | None = None):
        super().__init__(f"undeclared token {name!r}", line, col, stmt_id)
        self.name = name

    def __repr__(self):
        return f"UndeclaredToken({self.name!r})"


class UndeclaredName(IRError):
    kind = "UndeclaredName"


class UnauthorizedMint(IRError):
    kind = "UnauthorizedMint"


class InvalidDeclaration(IRError):
    kind = "InvalidDeclaration"


class SelfTransfer(IRError):
    kind = "SelfTransfer"


class ArityMismatch(IRError):
    kind = "ArityMismatch"


class InlineDepthExceeded(IRError):
    kind = "InlineDepthExceeded"

    def __init__(self, message: str, expansions: int):
        super().__init__(message)
        self.expansions = expansions


@dataclass(frozen=True)
class TokenDecl:
    id: str
    decimals: int = 18
    authorized_minters: frozenset = frozenset()
    is_stablecoin: bool = False


@dataclass(frozen=True)
class Param:
    name: str
    kind: str


@dataclass(frozen=True)
class Stmt:
    sid: int
    _: KW_ONLY
    origin: int | None = None
    pos: tuple = field(default=(0, 0), compare=False)

    def children(self) -> tuple:
        return ()


@dataclass(frozen=True)
class TransferFrom(Stmt):
    token: str
    src: str
    dst: str
    amount: str


@dataclass(frozen=True)
class TransferTo(Stmt):
    token: str
    dst: str
    amount: str


@dataclass(frozen=True)
class Mint(Stmt):
    token: str
    to: str
    amount: str


@dataclass(frozen=True)
class Burn(Stmt):
    token: str
    src: str
    amount: str


@dataclass(frozen=True)
class Branch(Stmt):
    cond: str
    then: tuple
    orelse: tuple = ()

    def children(self) -> tuple:
        return self.then + self.orelse


@dataclass(frozen=True)
class Callback(Stmt):
    handle: str
    args: tuple = ()


@dataclass(frozen=True)
class Call(Stmt):
    fn: str
    args: tuple = ()


@dataclass(frozen=True)
class Let(Stmt):
    name: str
    expr: str


TOKEN_MOVES = (TransferFrom, TransferTo, Mint, Burn)


@dataclass(frozen=True)
class FunctionDecl:
    name: str
    owner: str
    params: tuple = ()
    body: tuple = ()
    is_public: bool = True
    bidirectional: tuple | None = None
    is_hook: bool = False
    pos: tuple = field(default=(0, 0), compare=False)

    @property
    def fid(self) -> str:
        return f"{self.owner}.{self.name}"

    def param(self, name: str) -> Param | None:
        for p in self.params:
            if p.name == name:
                return p
        return None


@dataclass(frozen=True)
class ContractDecl:
    name: str
    functions: tuple = ()
    pos: tuple = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class ProtocolIR:
    name: str = "protocol"
    attacker: str = "attacker"
    tokens: tuple = ()
    contracts: tuple = ()
    hooks: tuple = ()

    @property
    def token_ids(self) -> list[str]:
        return [t.id for t in self.tokens]

    @property
    def stablecoins(self) -> frozenset:
        return frozenset(t.id for t in self.tokens if t.is_stablecoin)

    def token(self, tid: str) -> TokenDecl | None:
        for t in self.tokens:
            if t.id == tid:
                return t
        return None

    def contract(self, name: str) -> ContractDecl | None:
        for c in self.contracts:
            if c.name == name:
                return c
        return None

    @property
    def contract_ids(self) -> list[str]:
        return [c.name for c in self.contracts]

    @property
    def entry_functions(self) -> list[FunctionDecl]:
        return [f for c in self.contracts for f in c.functions if f.is_public]

    @property
    def functions(self) -> list[FunctionDecl]:
        return [f for c in self.contracts for f in c.functions]

    def hook(self, name: str) -> FunctionDecl | None:
        for h in self.hooks:
            if h.name == name:
                return h
        return None

    def lookup(self, fn: str, context: str) -> FunctionDecl | None:
        """Resolve a call target, either ``Contract.fn`` or ``fn`` in ``context``."""
        owner, _, name = fn.rpartition(".")
        owner = owner or context
        if owner == self.attacker:
            return self.hook(name)
        c = self.contract(owner)
        if c is None:
            return None
        for f in c.functions:
            if f.name == name:
                return f
        return None

    def all_functions(self) -> list[FunctionDecl]:
        return self.functions + list(self.hooks)


def walk(body) -> Iterator[Stmt]:
    """Pre-order traversal over a statement list, descending into branches."""
    for s in body:
        yield s
        if isinstance(s, Branch):
            yield from walk(s.then)
            yield from walk(s.orelse)


def max_sid(p: ProtocolIR) -> int:
    return max((s.sid for f in p.all_functions() for s in walk(f.body)), default=0)
