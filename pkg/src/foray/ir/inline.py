"""Inlining of ``call`` statements into their callers."""
from __future__ import annotations

import re
from dataclasses import replace

from .model import (
    ATTACKER_ALIASES,
    Branch,
    Call,
    FunctionDecl,
    InlineDepthExceeded,
    Let,
    ProtocolIR,
    TransferFrom,
    TransferTo,
    UndeclaredName,
    max_sid,
    walk,
)

DEFAULT_DEPTH = 3
_word = re.compile(r"[A-Za-z_$][A-Za-z0-9_$]*")


def _has_calls(p: ProtocolIR) -> bool:
    return any(isinstance(s, Call) for f in p.all_functions() for s in walk(f.body))


def _rename(text: str, mapping: dict) -> str:
    if not mapping:
        return text
    return _word.sub(lambda mt: mapping.get(mt.group(0), mt.group(0)), text)


class _Inliner:
    def __init__(self, p: ProtocolIR, depth: int):
        self.p = p
        self.depth = depth
        self.next_sid = max_sid(p) + 1
        self.expansion = 0

    def fresh(self) -> int:
        sid = self.next_sid
        self.next_sid += 1
        return sid

    def function(self, f: FunctionDecl) -> FunctionDecl:
        return replace(f, body=tuple(self.body(f.body, f.owner, 0, {}, fresh=False)))

    def body(self, body, owner: str, level: int, mapping: dict, fresh: bool) -> list:
        out = []
        for s in body:
            if isinstance(s, Call):
                out.extend(self.call(s, owner, level, mapping))
                continue
            new = self.rewrite(s, mapping)
            if isinstance(s, Branch):
                new = replace(
                    new,
                    then=tuple(self.body(s.then, owner, level, mapping, fresh)),
                    orelse=tuple(self.body(s.orelse, owner, level, mapping, fresh)),
                )
            if fresh:
                new = replace(new, sid=self.fresh(), origin=s.origin if s.origin is not None else s.sid)
            out.append(new)
        return out

    def rewrite(self, s, mapping: dict):
        if not mapping:
            return s
        changes = {}
        for k, v in vars(s).items():
            if k in ("sid", "origin", "pos", "then", "orelse"):
                continue
            if isinstance(v, str):
                changes[k] = _rename(v, mapping) if k in ("expr", "cond") else mapping.get(v, v)
            elif isinstance(v, tuple):
                changes[k] = tuple(mapping.get(a, a) for a in v)
        if isinstance(s, TransferTo) and mapping.get("this", "this") != "this":
            # the implicit sender is the callee contract, make it explicit
            return TransferFrom(
                s.sid, changes["token"], mapping["this"], changes["dst"], changes["amount"],
                origin=s.origin, pos=s.pos,
            )
        return replace(s, **changes)

    def call(self, s: Call, owner: str, level: int, mapping: dict) -> list:
        target = self.p.lookup(s.fn, owner)
        if target is None:
            raise UndeclaredName(f"call to unknown function {s.fn!r}", *s.pos, stmt_id=s.sid)
        if level >= self.depth:
            raise InlineDepthExceeded(
                f"inlining {target.fid} exceeds depth bound {self.depth}", expansions=level
            )
        args = [mapping.get(a, a) for a in s.args]
        self.expansion += 1
        tag = f"${self.expansion}"
        inner: dict = {q.name: a for q, a in zip(target.params, args)}
        for t in walk(target.body):
            if isinstance(t, Let):
                inner[t.name] = t.name + tag
        if target.owner != owner:
            # crossing a contract boundary: the callee sees the caller contract as msg.sender
            here = mapping.get("this", "this")
            inner.setdefault("this", target.owner)
            for alias in ATTACKER_ALIASES:
                inner.setdefault(alias, owner if here == "this" else here)
        elif "this" in mapping:
            inner.setdefault("this", mapping["this"])
            for alias in ATTACKER_ALIASES:
                if alias in mapping:
                    inner.setdefault(alias, mapping[alias])
        return self.body(target.body, target.owner, level + 1, inner, fresh=True)


def inline_calls(p: ProtocolIR, depth: int = DEFAULT_DEPTH) -> ProtocolIR:
    """Replace every ``call`` with the callee body, up to ``depth`` nested expansions.

    Inlined statements get fresh ids above the protocol's current maximum and
    keep the id of the statement they were copied from in ``origin``.
    """
    if depth < 0:
        raise ValueError("inline depth must be non-negative")
    if not _has_calls(p):
        return p
    inl = _Inliner(p, depth)
    contracts = tuple(
        replace(c, functions=tuple(inl.function(f) for f in c.functions)) for c in p.contracts
    )
    hooks = tuple(inl.function(h) for h in p.hooks)
    return replace(p, contracts=contracts, hooks=hooks)
