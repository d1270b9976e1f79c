"""Reader and writer for the line-oriented ``.ir`` protocol format.

One declaration or statement per line; blocks are closed with ``end``.
See docs/ir-format.md for the grammar.
"""
from __future__ import annotations

import json
import re
from dataclasses import replace

from .model import (
    PARAM_KINDS,
    Branch,
    Burn,
    Call,
    Callback,
    ContractDecl,
    FunctionDecl,
    IRError,
    Let,
    Mint,
    Param,
    ParseError,
    ProtocolIR,
    TokenDecl,
    TransferFrom,
    TransferTo,
    DuplicateIdentifier,
)

IDENT = r"[A-Za-z_$][A-Za-z0-9_$]*"
_ident = re.compile(rf"^{IDENT}$")
_label = re.compile(r"^@(\d+)(?:<(\d+))?\s+")
_token_call = re.compile(rf"^({IDENT})\.(transferFrom|transfer|mint|burn)\((.*)\)$")
_invoke = re.compile(rf"^(call|callback)\s+({IDENT}(?:\.{IDENT})?)\((.*)\)$")
_let = re.compile(rf"^let\s+({IDENT})\s*=\s*(.+)$")
_func = re.compile(rf"^(function|hook)\s+({IDENT})\((.*)\)\s*(.*)$")
_ARITY = {"transferFrom": 3, "transfer": 2, "mint": 2, "burn": 2}


def _split_args(text: str) -> list[str]:
    text = text.strip()
    if not text:
        return []
    return [a.strip() for a in text.split(",")]


class _Lines:
    def __init__(self, text: str):
        self.items = []
        for no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].rstrip()
            if line.strip():
                col = len(line) - len(line.lstrip()) + 1
                self.items.append((no, col, line.strip()))
        self.i = 0

    def peek(self):
        return self.items[self.i] if self.i < len(self.items) else None

    def next(self):
        item = self.peek()
        if item is None:
            last = self.items[-1][0] if self.items else 0
            raise ParseError("unexpected end of input, missing 'end'", last + 1, 1)
        self.i += 1
        return item


class _Parser:
    def __init__(self, text: str):
        self.lines = _Lines(text)
        self.next_sid = 1
        self.used_sids: set[int] = set()
        self.pending: list = []

    def sid(self, explicit: str | None, no: int, col: int) -> int:
        if explicit is None:
            while self.next_sid in self.used_sids:
                self.next_sid += 1
            sid = self.next_sid
        else:
            sid = int(explicit)
            if sid in self.used_sids:
                raise DuplicateIdentifier(f"duplicate statement id @{sid}", no, col)
        self.used_sids.add(sid)
        self.next_sid = max(self.next_sid, sid + 1)
        return sid

    def parse(self) -> ProtocolIR:
        name, attacker = "protocol", "attacker"
        tokens, contracts, hooks = [], [], []
        seen_tokens: set[str] = set()
        while self.lines.peek() is not None:
            no, col, line = self.lines.next()
            head, _, rest = line.partition(" ")
            if head == "protocol":
                name = self._ident(rest.strip(), no, col)
            elif head == "attacker":
                attacker = self._ident(rest.strip(), no, col)
            elif head == "token":
                tok = self._token(rest, no, col)
                if tok.id in seen_tokens:
                    raise DuplicateIdentifier(f"token {tok.id!r} declared twice", no, col)
                seen_tokens.add(tok.id)
                tokens.append(tok)
            elif head == "contract":
                cname = self._ident(rest.strip(), no, col)
                contracts.append(self._contract(cname, no, col))
            elif head == "hook":
                hooks.append(self._function(line, no, col, owner=None))
            else:
                raise ParseError(f"unexpected {head!r} at top level", no, col)
        hooks = [replace(h, owner=attacker) for h in hooks]
        return ProtocolIR(name, attacker, tuple(tokens), tuple(contracts), tuple(hooks))

    def _ident(self, text: str, no: int, col: int) -> str:
        if not _ident.match(text):
            raise ParseError(f"expected identifier, got {text!r}", no, col)
        return text

    def _token(self, rest: str, no: int, col: int) -> TokenDecl:
        words = rest.split()
        if not words:
            raise ParseError("token declaration needs a name", no, col)
        tid = self._ident(words[0], no, col)
        decimals, stable, minters = 18, False, []
        i = 1
        while i < len(words):
            w = words[i]
            if w == "decimals" and i + 1 < len(words):
                try:
                    decimals = int(words[i + 1])
                except ValueError:
                    raise ParseError(f"bad decimals {words[i + 1]!r}", no, col) from None
                i += 2
            elif w == "stablecoin":
                stable = True
                i += 1
            elif w == "minters":
                minters = [self._ident(m.strip(","), no, col) for m in words[i + 1 :]]
                i = len(words)
            else:
                raise ParseError(f"unexpected {w!r} in token declaration", no, col)
        return TokenDecl(tid, decimals, frozenset(minters), stable)

    def _contract(self, cname: str, no: int, col: int) -> ContractDecl:
        functions = []
        while True:
            fno, fcol, line = self.lines.next()
            if line == "end":
                return ContractDecl(cname, tuple(functions), (no, col))
            if not line.startswith("function "):
                raise ParseError(f"expected 'function' or 'end' in contract {cname}, got {line!r}", fno, fcol)
            functions.append(self._function(line, fno, fcol, owner=cname))

    def _function(self, line: str, no: int, col: int, owner: str | None) -> FunctionDecl:
        m = _func.match(line)
        if not m:
            raise ParseError(f"malformed function header {line!r}", no, col)
        kind, fname, params_text, tail = m.groups()
        params = []
        for chunk in _split_args(params_text):
            pname, sep, pkind = chunk.partition(":")
            pname, pkind = pname.strip(), pkind.strip()
            if not sep or pkind not in PARAM_KINDS:
                raise ParseError(f"parameter {chunk!r} needs a kind in {PARAM_KINDS}", no, col)
            params.append(Param(self._ident(pname, no, col), pkind))
        is_public, bidir = kind == "function", None
        words = tail.split()
        if kind == "function":
            if not words or words[0] not in ("public", "private"):
                raise ParseError("function needs 'public' or 'private'", no, col)
            is_public = words[0] == "public"
            words = words[1:]
        else:
            is_public = False
        if words:
            if words[0] != "bidirectional" or len(words) != 3:
                raise ParseError(f"unexpected function modifiers {' '.join(words)!r}", no, col)
            bidir = (self._ident(words[1], no, col), self._ident(words[2], no, col))
        body = self._block(("end",))[0]
        return FunctionDecl(
            fname, owner or "", tuple(params), tuple(body), is_public, bidir, kind == "hook", (no, col)
        )

    def _block(self, closers):
        body = []
        while True:
            no, col, line = self.lines.next()
            if line in closers:
                return body, line
            body.append(self._stmt(line, no, col))

    def _stmt(self, line: str, no: int, col: int):
        explicit = origin = None
        m = _label.match(line)
        if m:
            explicit, origin = m.group(1), m.group(2)
            line = line[m.end() :]
        origin = int(origin) if origin is not None else None
        if line.startswith("if ") or line == "if":
            sid = self.sid(explicit, no, col)
            then, closer = self._block(("else", "end"))
            orelse = []
            if closer == "else":
                orelse, _ = self._block(("end",))
            return Branch(sid, line[2:].strip(), tuple(then), tuple(orelse), origin=origin, pos=(no, col))
        sid = self.sid(explicit, no, col)
        kw = dict(origin=origin, pos=(no, col))
        m = _token_call.match(line)
        if m:
            token, method, args_text = m.groups()
            args = _split_args(args_text)
            if len(args) != _ARITY[method]:
                raise ParseError(f"{method} takes {_ARITY[method]} arguments, got {len(args)}", no, col)
            for a in args:
                if not a or not (_ident.match(a) or a.isdigit() or a in ("msg.sender",)):
                    raise ParseError(f"bad argument {a!r}", no, col)
            if method == "transferFrom":
                return TransferFrom(sid, token, args[0], args[1], args[2], **kw)
            if method == "transfer":
                return TransferTo(sid, token, args[0], args[1], **kw)
            if method == "mint":
                return Mint(sid, token, args[0], args[1], **kw)
            return Burn(sid, token, args[0], args[1], **kw)
        m = _invoke.match(line)
        if m:
            word, target, args_text = m.groups()
            args = tuple(_split_args(args_text))
            if word == "call":
                return Call(sid, target, args, **kw)
            return Callback(sid, target, args, **kw)
        m = _let.match(line)
        if m:
            return Let(sid, m.group(1), m.group(2).strip(), **kw)
        raise ParseError(f"unrecognised statement {line!r}", no, col)


def parse_protocol(text: str, *, validate: bool = True) -> ProtocolIR:
    """Parse ``.ir`` source. With ``validate`` the first diagnostic is raised."""
    p = _Parser(text).parse()
    if validate:
        from .validate import validate_protocol

        diags = validate_protocol(p)
        if diags:
            raise diags[0].to_error()
    return p


def load_protocol(path, **kw) -> ProtocolIR:
    with open(path, encoding="utf-8") as fh:
        return parse_protocol(fh.read(), **kw)


# -- writer ------------------------------------------------------------------------

def _label_of(s) -> str:
    return f"@{s.sid}" + (f"<{s.origin}" if s.origin is not None else "") + " "


def _emit_body(body, depth: int, out: list[str]):
    pad = "  " * depth
    for s in body:
        lab = _label_of(s)
        if isinstance(s, Branch):
            out.append(f"{pad}{lab}if {s.cond}".rstrip())
            _emit_body(s.then, depth + 1, out)
            if s.orelse:
                out.append(f"{pad}else")
                _emit_body(s.orelse, depth + 1, out)
            out.append(f"{pad}end")
        elif isinstance(s, TransferFrom):
            out.append(f"{pad}{lab}{s.token}.transferFrom({s.src}, {s.dst}, {s.amount})")
        elif isinstance(s, TransferTo):
            out.append(f"{pad}{lab}{s.token}.transfer({s.dst}, {s.amount})")
        elif isinstance(s, Mint):
            out.append(f"{pad}{lab}{s.token}.mint({s.to}, {s.amount})")
        elif isinstance(s, Burn):
            out.append(f"{pad}{lab}{s.token}.burn({s.src}, {s.amount})")
        elif isinstance(s, Callback):
            out.append(f"{pad}{lab}callback {s.handle}({', '.join(s.args)})")
        elif isinstance(s, Call):
            out.append(f"{pad}{lab}call {s.fn}({', '.join(s.args)})")
        elif isinstance(s, Let):
            out.append(f"{pad}{lab}let {s.name} = {s.expr}")
        else:  # pragma: no cover - closed union
            raise TypeError(s)


def _emit_function(f: FunctionDecl, depth: int, out: list[str]):
    pad = "  " * depth
    params = ", ".join(f"{p.name}: {p.kind}" for p in f.params)
    if f.is_hook:
        head = f"hook {f.name}({params})"
    else:
        head = f"function {f.name}({params}) {'public' if f.is_public else 'private'}"
        if f.bidirectional:
            head += f" bidirectional {f.bidirectional[0]} {f.bidirectional[1]}"
    out.append(pad + head)
    _emit_body(f.body, depth + 1, out)
    out.append(pad + "end")


def serialize(p: ProtocolIR) -> str:
    out = [f"protocol {p.name}", f"attacker {p.attacker}"]
    for t in p.tokens:
        line = f"token {t.id} decimals {t.decimals}"
        if t.is_stablecoin:
            line += " stablecoin"
        if t.authorized_minters:
            line += " minters " + " ".join(sorted(t.authorized_minters))
        out.append(line)
    for c in p.contracts:
        out.append(f"contract {c.name}")
        for f in c.functions:
            _emit_function(f, 1, out)
        out.append("end")
    for h in p.hooks:
        _emit_function(h, 0, out)
    return "\n".join(out) + "\n"


def _stmt_json(s) -> dict:
    d = {"id": s.sid, "kind": type(s).__name__}
    if s.origin is not None:
        d["origin"] = s.origin
    for k, v in vars(s).items():
        if k in ("sid", "origin", "pos"):
            continue
        if k in ("then", "orelse"):
            d[k] = [_stmt_json(c) for c in v]
        else:
            d[k] = list(v) if isinstance(v, tuple) else v
    d["line"] = s.pos[0]
    return d


def to_json(p: ProtocolIR) -> str:
    def fn(f: FunctionDecl) -> dict:
        return {
            "id": f.fid,
            "name": f.name,
            "public": f.is_public,
            "hook": f.is_hook,
            "params": [{"name": q.name, "kind": q.kind} for q in f.params],
            "bidirectional": list(f.bidirectional) if f.bidirectional else None,
            "body": [_stmt_json(s) for s in f.body],
        }

    doc = {
        "protocol": p.name,
        "attacker": p.attacker,
        "tokens": [
            {
                "id": t.id,
                "decimals": t.decimals,
                "stablecoin": t.is_stablecoin,
                "minters": sorted(t.authorized_minters),
            }
            for t in p.tokens
        ],
        "contracts": [{"name": c.name, "functions": [fn(f) for f in c.functions]} for c in p.contracts],
        "hooks": [fn(h) for h in p.hooks],
    }
    return json.dumps(doc, indent=2, sort_keys=False)


__all__ = ["parse_protocol", "load_protocol", "serialize", "to_json", "IRError"]
