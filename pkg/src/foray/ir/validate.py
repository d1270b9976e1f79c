"""Static checks over a parsed protocol.

``validate_protocol`` never raises; it returns diagnostics in source order.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import model as m
from .model import (
    ATTACKER_ALIASES,
    Branch,
    Burn,
    Call,
    Callback,
    FunctionDecl,
    Let,
    Mint,
    ProtocolIR,
    TransferFrom,
    TransferTo,
    walk,
)

MAX_DECIMALS = 30


@dataclass(frozen=True)
class Diagnostic:
    kind: str
    message: str
    stmt_id: int | None = None
    line: int = 0
    col: int = 0

    def to_error(self) -> m.IRError:
        if self.kind == "UndeclaredToken":
            return m.UndeclaredToken(self.message, self.line, self.col, self.stmt_id)
        cls = getattr(m, self.kind, m.IRError)
        if not (isinstance(cls, type) and issubclass(cls, m.IRError)):
            cls = m.IRError
        return cls(self.message, self.line, self.col, self.stmt_id)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "message": self.message,
            "stmt_id": self.stmt_id,
            "line": self.line,
            "col": self.col,
        }


def _is_int(text: str) -> bool:
    return text.isdigit()


class _Checker:
    def __init__(self, p: ProtocolIR):
        self.p = p
        self.out: list[Diagnostic] = []
        self.tokens = set(p.token_ids)
        self.contracts = set(p.contract_ids)

    def add(self, kind, message, stmt=None, pos=None):
        line, col = (stmt.pos if stmt is not None else pos) or (0, 0)
        self.out.append(Diagnostic(kind, message, stmt.sid if stmt is not None else None, line, col))

    def run(self) -> list[Diagnostic]:
        p = self.p
        seen = set()
        for t in p.tokens:
            if t.id in seen:
                self.add("DuplicateIdentifier", f"token {t.id!r} declared twice")
            seen.add(t.id)
            if not 0 <= t.decimals <= MAX_DECIMALS:
                self.add("InvalidDeclaration", f"token {t.id} decimals {t.decimals} outside 0..{MAX_DECIMALS}")
            for who in sorted(t.authorized_minters):
                if who not in self.contracts and who != p.attacker:
                    self.add("UndeclaredName", f"minter {who!r} of token {t.id} is not a contract")
        names = set()
        for c in p.contracts:
            if c.name in names or c.name in self.tokens or c.name == p.attacker:
                self.add("DuplicateIdentifier", f"contract name {c.name!r} already used", pos=c.pos)
            names.add(c.name)
            fnames = set()
            for f in c.functions:
                if f.name in fnames:
                    self.add("DuplicateFunction", f"function {f.name!r} defined twice in {c.name}", pos=f.pos)
                fnames.add(f.name)
        hnames = set()
        for h in p.hooks:
            if h.name in hnames:
                self.add("DuplicateFunction", f"hook {h.name!r} defined twice", pos=h.pos)
            hnames.add(h.name)
        sids = set()
        for f in p.all_functions():
            for s in walk(f.body):
                if s.sid in sids:
                    self.add("DuplicateIdentifier", f"statement id @{s.sid} used twice", s)
                sids.add(s.sid)
        for f in p.all_functions():
            self.function(f)
        return self.out

    def function(self, f: FunctionDecl):
        token_params = [q.name for q in f.params if q.kind == "token"]
        if f.bidirectional:
            for t in f.bidirectional:
                if t not in self.tokens:
                    self.add("UndeclaredToken", t, pos=f.pos)
            if f.bidirectional[0] == f.bidirectional[1]:
                self.add("InvalidDeclaration", f"{f.fid}: bidirectional pair needs two distinct tokens", pos=f.pos)
            if len(token_params) != 2:
                self.add("InvalidDeclaration", f"{f.fid}: bidirectional needs exactly two token parameters", pos=f.pos)
        elif token_params:
            self.add("InvalidDeclaration", f"{f.fid}: token parameters require 'bidirectional'", pos=f.pos)
        names = {q.name for q in f.params}
        if len(names) != len(f.params):
            self.add("DuplicateIdentifier", f"{f.fid}: repeated parameter name", pos=f.pos)
        self.body(f, f.body, set())

    def body(self, f: FunctionDecl, body, locals_: set):
        locals_ = set(locals_)
        for s in body:
            if isinstance(s, Branch):
                self.body(f, s.then, locals_)
                self.body(f, s.orelse, locals_)
            elif isinstance(s, Let):
                locals_.add(s.name)
            elif isinstance(s, (TransferFrom, TransferTo, Mint, Burn)):
                self.move(f, s, locals_)
            elif isinstance(s, Callback):
                hook = self.p.hook(s.handle)
                if hook is None:
                    self.add("UndeclaredName", f"callback to unknown hook {s.handle!r}", s)
                else:
                    if len(hook.params) != len(s.args):
                        self.add("ArityMismatch", f"hook {s.handle} takes {len(hook.params)} arguments", s)
                    for a in s.args:
                        self.value(f, s, a, locals_)
            elif isinstance(s, Call):
                target = self.p.lookup(s.fn, f.owner)
                if target is None:
                    self.add("UndeclaredName", f"call to unknown function {s.fn!r}", s)
                else:
                    if len(target.params) != len(s.args):
                        self.add("ArityMismatch", f"{target.fid} takes {len(target.params)} arguments", s)
                    for a in s.args:
                        self.value(f, s, a, locals_)

    def token(self, f: FunctionDecl, s, tok: str):
        q = f.param(tok)
        if q is not None and q.kind == "token":
            return
        if tok not in self.tokens:
            self.add("UndeclaredToken", tok, s)

    def value(self, f, s, a: str, locals_):
        if _is_int(a) or a in locals_ or f.param(a) is not None:
            return
        if self.is_address(f, a):
            return
        self.add("UndeclaredName", f"undeclared name {a!r}", s)

    def is_address(self, f, a: str) -> bool:
        q = f.param(a)
        if q is not None:
            return q.kind == "address"
        return a == "this" or a in ATTACKER_ALIASES or a == self.p.attacker or a in self.contracts

    def address(self, f, s, a: str):
        if not self.is_address(f, a):
            self.add("UndeclaredName", f"unknown address {a!r}", s)

    def amount(self, f, s, x: str, locals_):
        if _is_int(x) or x in locals_:
            return
        q = f.param(x)
        if q is None or q.kind != "amount":
            self.add("UndeclaredName", f"unknown amount {x!r}", s)

    def _canon(self, f, a: str) -> str:
        if a == "this":
            return f.owner
        if a in ATTACKER_ALIASES:
            return "caller"
        return a

    def move(self, f, s, locals_):
        self.token(f, s, s.token)
        self.amount(f, s, s.amount, locals_)
        if isinstance(s, TransferFrom):
            self.address(f, s, s.src)
            self.address(f, s, s.dst)
            if s.src == s.dst or self._canon(f, s.src) == self._canon(f, s.dst):
                self.add("SelfTransfer", f"transfer from {s.src} to itself", s)
        elif isinstance(s, TransferTo):
            self.address(f, s, s.dst)
            if self._canon(f, s.dst) == f.owner:
                self.add("SelfTransfer", f"transfer from {f.owner} to itself", s)
        else:
            who = s.to if isinstance(s, Mint) else s.src
            self.address(f, s, who)
            decl = self.p.token(s.token)
            if decl is not None and f.owner not in decl.authorized_minters:
                verb = "mint" if isinstance(s, Mint) else "burn"
                self.add("UnauthorizedMint", f"{f.owner} may not {verb} {s.token}", s)


def validate_protocol(p: ProtocolIR) -> list[Diagnostic]:
    return _Checker(p).run()
