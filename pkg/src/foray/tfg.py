"""Token flow graph construction.

Two passes: flow predicates are read off token-moving statements, then
edge rules pattern-match over them (loan, swap, mint, burn, and a transfer
fallback). Each flow feeds at most one edge.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .ir.model import (
    ATTACKER_ALIASES,
    DEAD,
    Branch,
    Burn,
    Callback,
    FunctionDecl,
    Mint,
    ProtocolIR,
    TransferFrom,
    TransferTo,
)
from .logic import Term, Var, and_, ge, le, pretty

EPS = "ε"
OPS = ("borrow", "payback", "swap", "mint", "burn", "transfer")
RECIPIENT_NOTE = "recipient-side constraints omitted"


class AmbiguousLoanPattern(Exception):
    def __init__(self, fid: str, callback_sid: int, candidates):
        super().__init__(
            f"{fid}: callback @{callback_sid} has {len(candidates)} repaying flows "
            f"({', '.join('@%d' % c for c in candidates)})"
        )
        self.fid = fid
        self.callback_sid = callback_sid
        self.candidates = tuple(candidates)


@dataclass(frozen=True)
class FlowPredicate:
    token: str
    amount: str
    src: str
    dst: str
    origin: int
    arms: tuple = ()  # ((branch sid, 0|1), ...) enclosing the statement

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError(f"flow @{self.origin} has identical endpoints {self.src}")
        if self.src == DEAD and self.dst == DEAD:
            raise ValueError("flow cannot both mint and burn")

    def compatible(self, other: "FlowPredicate") -> bool:
        """False when the two flows sit in different arms of one branch."""
        mine = dict(self.arms)
        return all(mine.get(b, arm) == arm for b, arm in other.arms)

    def __str__(self):
        return f"flow({self.token}, {self.amount}, {self.src}, {self.dst})"


@dataclass(frozen=True)
class FlowState:
    function: str
    entries: tuple = ()  # FlowPredicate in program order
    variant: int = 0

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_sid(self) -> dict:
        return {w.origin: w for w in self.entries}


# -- Φ over role variables ----------------------------------------------------

def pre(token: str, addr: str) -> Var:
    return Var(f"pre:{token}:{addr}")


def post(token: str, addr: str) -> Var:
    return Var(f"post:{token}:{addr}")


def amt(name: str) -> Var:
    return Var(f"amt:{name}")


def decode_var(name: str) -> tuple:
    """``pre:MU:attacker`` -> ("pre", "MU", "attacker"); ``amt:x`` -> ("amt", "x")."""
    return tuple(name.split(":", 2))


def render_var(name: str) -> str:
    parts = decode_var(name)
    if parts[0] == "amt":
        return parts[1]
    kind, token, addr = parts
    return f"{token}{'′' if kind == 'post' else ''}[{addr}]"


def pretty_phi(phi: Term) -> str:
    from .logic import substitute
    from .logic import free_vars

    mapping = {v: Var(render_var(v)) for v in free_vars(phi)}
    return pretty(substitute(phi, mapping))


def _spend(u, a, x) -> tuple:
    return (ge(pre(u, a), amt(x)), le(post(u, a), pre(u, a)))


def _receive(u, a, x) -> tuple:
    return (ge(post(u, a), amt(x)), ge(post(u, a), pre(u, a)))


def edge_phi(op: str, tokens: tuple, address: str, amounts: tuple) -> Term:
    """Φ for an edge of kind ``op``, as the inference rules would build it."""
    if op == "swap":
        (u, v), (x, y) = tokens, amounts
        return and_(*_spend(u, address, x), *_receive(v, address, y))
    if op in ("borrow", "mint"):
        return and_(*_receive(tokens[0], address, amounts[0]))
    if op in ("payback", "burn", "transfer"):
        return and_(*_spend(tokens[0], address, amounts[0]))
    raise ValueError(f"unknown edge op {op}")


@dataclass(frozen=True)
class TfgEdge:
    id: str
    src: str
    dst: str
    op: str
    phi: Term
    function: str
    sids: tuple
    variant: int = 0
    actor: str = ""  # market, lender, minter or transfer recipient contract
    address: str = ""  # the firing address role a
    counterparty: str = ""  # role b
    tokens: tuple = ()  # (u,) or (u, v)
    amounts: tuple = ()  # amount terms in the source IR
    note: str = ""
    consumes: tuple = ()  # origins of the flow predicates this edge accounts for

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown edge op {self.op}")
        if self.op == "swap" and EPS in (self.src, self.dst):
            raise ValueError("swap edges connect two tokens")
        if self.op in ("borrow", "mint") and self.src != EPS:
            raise ValueError(f"{self.op} edges start at {EPS}")
        if self.op in ("payback", "burn") and self.dst != EPS:
            raise ValueError(f"{self.op} edges end at {EPS}")

    @property
    def provenance(self) -> tuple:
        return (self.function, self.sids)


@dataclass(frozen=True)
class TokenFlowGraph:
    nodes: tuple
    edges: tuple
    labels: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def edge_map(self) -> dict:
        return {e.id: e.provenance for e in self.edges}

    def edge(self, eid: str) -> TfgEdge:
        for e in self.edges:
            if e.id == eid:
                return e
        raise KeyError(eid)

    def out_edges(self, node: str) -> list:
        return [e for e in self.edges if e.src == node]

    def label(self, e: TfgEdge | str) -> str:
        eid = e if isinstance(e, str) else e.id
        return self.labels.get(eid, eid)

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": [
                {
                    "id": e.id,
                    "label": self.label(e),
                    "src": e.src,
                    "dst": e.dst,
                    "op": e.op,
                    "phi": pretty_phi(e.phi),
                    "note": e.note,
                    "function": e.function,
                    "variant": e.variant,
                    "statements": list(e.sids),
                    "actor": e.actor,
                    "address": e.address,
                }
                for e in self.edges
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    def to_dot(self) -> str:
        lines = ["digraph tfg {", "  rankdir=LR;"]
        for n in self.nodes:
            lines.append(f'  "{n}" [shape={"doublecircle" if n == EPS else "circle"}];')
        for e in self.edges:
            tip = pretty_phi(e.phi).replace('"', "'")
            lines.append(
                f'  "{e.src}" -> "{e.dst}" [label="{self.label(e)}", id="{e.id}", tooltip="{tip}"];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"


# -- flow inference ------------------------------------------------------------

def _variant_binding(f: FunctionDecl, variant: int) -> dict:
    if not f.bidirectional:
        return {}
    names = [q.name for q in f.params if q.kind == "token"]
    pair = f.bidirectional if variant == 0 else f.bidirectional[::-1]
    return dict(zip(names, pair))


def _resolver(f: FunctionDecl, p: ProtocolIR | None, caller: str | None, self_addr: str | None):
    attacker = p.attacker if p is not None else "attacker"
    me = self_addr or (attacker if f.is_hook else f.owner)
    who_calls = caller or attacker

    def resolve(a: str) -> str:
        if a == "this":
            return me
        if a in ATTACKER_ALIASES:
            return who_calls
        q = f.param(a)
        if q is not None and q.kind == "address":
            # free address arguments are chosen by the attacker: model them as the attacker
            return attacker
        return a

    return resolve, me


def infer_flows(
    f: FunctionDecl,
    p: ProtocolIR | None = None,
    *,
    variant: int = 0,
    caller: str | None = None,
    binding: dict | None = None,
) -> FlowState:
    """Collect one flow predicate per token-moving statement of ``f``.

    ``caller`` overrides who ``caller``/``msg.sender`` denotes (used for hook
    bodies, where it is the contract that registered the callback).
    ``binding`` renames amount parameters, e.g. to callback arguments.
    """
    resolve, me = _resolver(f, p, caller, None)
    tokens = _variant_binding(f, variant)
    binding = binding or {}
    out: list[FlowPredicate] = []

    def visit(body, arms):
        for s in body:
            if isinstance(s, Branch):
                visit(s.then, arms + ((s.sid, 0),))
                visit(s.orelse, arms + ((s.sid, 1),))
                continue
            if isinstance(s, TransferFrom):
                a, b = resolve(s.src), resolve(s.dst)
            elif isinstance(s, TransferTo):
                a, b = me, resolve(s.dst)
            elif isinstance(s, Mint):
                a, b = DEAD, resolve(s.to)
            elif isinstance(s, Burn):
                a, b = resolve(s.src), DEAD
            else:
                continue
            if a == b:
                # parameters collapsed onto the same address; not a flow
                continue
            u = tokens.get(s.token, s.token)
            x = binding.get(s.amount, s.amount)
            out.append(FlowPredicate(u, x, a, b, s.sid, arms))

    visit(f.body, ())
    return FlowState(f.fid, tuple(out), variant)


def function_variants(f: FunctionDecl) -> tuple:
    return (0, 1) if f.bidirectional else (0,)


def flow_states(p: ProtocolIR) -> dict:
    """Flow states of every public function, keyed by ``(fid, variant)``."""
    return {
        (f.fid, v): infer_flows(f, p, variant=v)
        for f in p.entry_functions
        for v in function_variants(f)
    }


# -- edge inference --------------------------------------------------------------

_KIND_ORDER = {op: i for i, op in enumerate(OPS)}


def _callbacks(f: FunctionDecl):
    out = []

    def visit(body, arms):
        for s in body:
            if isinstance(s, Branch):
                visit(s.then, arms + ((s.sid, 0),))
                visit(s.orelse, arms + ((s.sid, 1),))
            elif isinstance(s, Callback):
                out.append((s, arms))

    visit(f.body, ())
    return out


def _order_of(f: FunctionDecl) -> dict:
    from .ir.model import walk

    return {s.sid: i for i, s in enumerate(walk(f.body))}


def _edges_for(f: FunctionDecl, state: FlowState, p: ProtocolIR) -> list:
    """Edges of one function variant, as (anchor, kind, fields) tuples."""
    flows = list(state.entries)
    pos = _order_of(f)
    consumed: set[int] = set()
    found = []

    # loan: flow out of the contract, then a callback whose hook pays it back
    for cb, cb_arms in _callbacks(f):
        hook = p.hook(cb.handle)
        if hook is None:
            continue
        binding = {q.name: arg for q, arg in zip(hook.params, cb.args)}
        hook_flows = infer_flows(hook, p, caller=f.owner, binding=binding)
        dummy = FlowPredicate("_", "_", "_a", "_b", cb.sid, cb_arms)
        before = [
            w for w in flows
            if pos[w.origin] < pos[cb.sid] and w.origin not in consumed and w.compatible(dummy)
        ]
        for s1 in reversed(before):
            repay = [
                w for w in hook_flows
                if w.token == s1.token and w.src == s1.dst and w.dst == s1.src
            ]
            if not repay:
                continue
            if len(repay) > 1:
                raise AmbiguousLoanPattern(f.fid, cb.sid, [w.origin for w in repay])
            s3 = repay[0]
            consumed.add(s1.origin)
            u, lender, borrower = s1.token, s1.src, s1.dst
            sids = (s1.origin, cb.sid, s3.origin)
            note = RECIPIENT_NOTE
            found.append((pos[s1.origin], "borrow", dict(
                src=EPS, dst=u, phi=and_(*_receive(u, borrower, s1.amount)), sids=sids,
                actor=lender, address=borrower, counterparty=lender, tokens=(u,),
                amounts=(s1.amount,), note=note, consumes=(s1.origin,))))
            found.append((pos[s1.origin], "payback", dict(
                src=u, dst=EPS, phi=and_(*_spend(u, borrower, s3.amount)), sids=sids,
                actor=lender, address=borrower, counterparty=lender, tokens=(u,),
                amounts=(s3.amount,), note=note, consumes=(s3.origin,))))
            break

    # swap: a flow immediately answered by a flow of another token going back
    for i, s1 in enumerate(flows):
        if s1.origin in consumed or DEAD in (s1.src, s1.dst):
            continue
        nxt = next((w for w in flows[i + 1:] if w.compatible(s1)), None)
        if nxt is None or nxt.origin in consumed:
            continue
        if nxt.src == s1.dst and nxt.dst == s1.src and nxt.token != s1.token:
            consumed.update((s1.origin, nxt.origin))
            u, v, a, b = s1.token, nxt.token, s1.src, s1.dst
            phi = and_(*_spend(u, a, s1.amount), *_receive(v, a, nxt.amount))
            found.append((pos[s1.origin], "swap", dict(
                src=u, dst=v, phi=phi, sids=(s1.origin, nxt.origin), actor=b,
                address=a, counterparty=b, tokens=(u, v), amounts=(s1.amount, nxt.amount),
                note=RECIPIENT_NOTE, consumes=(s1.origin, nxt.origin))))

    for w in flows:
        if w.origin in consumed:
            continue
        consumed.add(w.origin)
        if w.src == DEAD:
            found.append((pos[w.origin], "mint", dict(
                src=EPS, dst=w.token, phi=and_(*_receive(w.token, w.dst, w.amount)), sids=(w.origin,),
                actor=f.owner, address=w.dst, counterparty=DEAD, tokens=(w.token,),
                amounts=(w.amount,), consumes=(w.origin,))))
        elif w.dst == DEAD:
            found.append((pos[w.origin], "burn", dict(
                src=w.token, dst=EPS, phi=and_(*_spend(w.token, w.src, w.amount)), sids=(w.origin,),
                actor=f.owner, address=w.src, counterparty=DEAD, tokens=(w.token,),
                amounts=(w.amount,), consumes=(w.origin,))))
        else:
            found.append((pos[w.origin], "transfer", dict(
                src=w.token, dst=EPS, phi=and_(*_spend(w.token, w.src, w.amount)), sids=(w.origin,),
                actor=w.dst, address=w.src, counterparty=w.dst, tokens=(w.token,),
                amounts=(w.amount,), consumes=(w.origin,))))
    found.sort(key=lambda t: (t[0], _KIND_ORDER[t[1]]))
    return found


def infer_edges(states: dict, p: ProtocolIR) -> list:
    """Apply the edge rules to every public function variant in declaration order."""
    edges = []
    n = 0
    for f in p.entry_functions:
        for v in function_variants(f):
            state = states.get((f.fid, v))
            if state is None:
                state = states.get(f.fid) if v == 0 else None
            if state is None:
                raise KeyError(f"no flow state for {f.fid} variant {v}")
            for _, kind, fields in _edges_for(f, state, p):
                n += 1
                edges.append(TfgEdge(id=f"e{n}", op=kind, function=f.fid, variant=v, **fields))
    return edges


_SUP = str.maketrans("0123456789", "⁰¹²³⁴⁵⁶⁷⁸⁹")


def edge_labels(edges) -> dict:
    """Display names such as ``swap²ʳ``: per-op function index, ``ʳ`` for the reversed variant."""
    index: dict = {}
    labels = {}
    for e in edges:
        per_op = index.setdefault(e.op, {})
        k = per_op.setdefault(e.function, len(per_op) + 1)
        labels[e.id] = f"{e.op}{str(k).translate(_SUP)}{'ʳ' if e.variant else ''}"
    return labels


def build_tfg(p: ProtocolIR) -> TokenFlowGraph:
    """Graph over declared tokens plus ε; ``p`` must already be inlined."""
    edges = infer_edges(flow_states(p), p)
    nodes = tuple(p.token_ids) + (EPS,)
    return TokenFlowGraph(nodes, tuple(edges), edge_labels(edges))
