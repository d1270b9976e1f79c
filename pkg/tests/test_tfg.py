import pytest
from hypothesis import assume, given, settings

from foray import logic
from foray.ir import inline_calls, parse_protocol
from foray.ir.model import walk
from foray.tfg import (
    DEAD,
    EPS,
    AmbiguousLoanPattern,
    TfgEdge,
    build_tfg,
    decode_var,
    flow_states,
    infer_flows,
    pretty_phi,
)
from strategies import protocol_sources


def one_function(body: str, tokens="token U\ntoken V minters C\n", params="x: amount, y: amount") -> str:
    return f"{tokens}contract C\n  function f({params}) public\n{body}  end\nend\n"


def flows_of(src):
    p = parse_protocol(src)
    return infer_flows(p.contract("C").functions[0], p)


def test_flow_from():
    st = flows_of(one_function("    @1 U.transferFrom(caller, this, x)\n"))
    (w,) = st.entries
    assert (w.token, w.amount, w.src, w.dst, w.origin) == ("U", "x", "attacker", "C", 1)


def test_flow_mint():
    st = flows_of(one_function("    @1 V.mint(caller, x)\n"))
    (w,) = st.entries
    assert (w.src, w.dst) == (DEAD, "attacker")


def test_branch_is_union():
    body = "    @1 if x > 0\n      @2 U.transfer(caller, x)\n    else\n      @3 V.transfer(caller, y)\n    end\n"
    st = flows_of(one_function(body))
    assert [w.origin for w in st.entries] == [2, 3]
    assert st.entries[0].arms != st.entries[1].arms


def test_no_token_calls():
    st = flows_of(one_function("    @1 let z = x * 2\n"))
    assert st.entries == ()


def test_mumug_edges(mumug):
    g = build_tfg(inline_calls(mumug))
    assert set(g.nodes) == {"MU", "USDCe", EPS}
    got = sorted((g.label(e), e.op, e.src, e.dst, e.actor) for e in g.edges)
    assert got == sorted([
        ("borrow¹", "borrow", EPS, "MU", "DeFiLender"),
        ("payback¹", "payback", "MU", EPS, "DeFiLender"),
        ("swap¹", "swap", "USDCe", "MU", "Mubank"),
        ("swap²", "swap", "MU", "USDCe", "PairAMM"),
        ("swap²ʳ", "swap", "USDCe", "MU", "PairAMM"),
    ])


def test_lone_transfer_phi():
    p = parse_protocol(one_function("    @1 U.transferFrom(caller, this, x)\n"))
    (e,) = build_tfg(p).edges
    assert (e.op, e.src, e.dst) == ("transfer", "U", EPS)
    assert pretty_phi(e.phi) == "(U[attacker] ≥ x) ∧ (U′[attacker] ≤ U[attacker])"


def test_mint_and_burn_edges():
    body = "    @1 V.mint(caller, x)\n    @2 V.burn(caller, y)\n"
    g = build_tfg(parse_protocol(one_function(body)))
    assert [(e.op, e.src, e.dst) for e in g.edges] == [("mint", EPS, "V"), ("burn", "V", EPS)]


def test_tokens_without_functions():
    g = build_tfg(parse_protocol("token A\ntoken B\n"))
    assert g.nodes == ("A", "B", EPS)
    assert g.edges == ()


def test_deterministic(mumug):
    p = inline_calls(mumug)
    a, b = build_tfg(p), build_tfg(p)
    assert a == b
    assert a.to_json() == b.to_json()
    assert a.to_dot() == b.to_dot()


def test_ambiguous_loan():
    src = (
        "token U\ncontract L\n  function loan(x: amount) public\n"
        "    @1 U.transfer(caller, x)\n    @2 callback cb(x)\n  end\nend\n"
        "hook cb(a: amount)\n  @3 U.transfer(caller, a)\n  @4 U.transfer(caller, a)\nend\n"
    )
    with pytest.raises(AmbiguousLoanPattern):
        build_tfg(parse_protocol(src))


def test_edge_invariants():
    phi = logic.Const(1)
    with pytest.raises(ValueError):
        TfgEdge("e1", EPS, "U", "swap", phi, "f", ())
    with pytest.raises(ValueError):
        TfgEdge("e1", "U", "V", "borrow", phi, "f", ())
    with pytest.raises(ValueError):
        TfgEdge("e1", "U", "V", "payback", phi, "f", ())


@settings(max_examples=300)
@given(protocol_sources())
def test_flow_inference_total(src):
    p = inline_calls(parse_protocol(src), 10)
    for f in p.entry_functions:
        st = infer_flows(f, p)
        moving = [s for s in walk(f.body) if hasattr(s, "token")]
        # one predicate per token-moving statement, except degenerate self-flows
        assert len(st.entries) <= len(moving)
        assert len({w.origin for w in st.entries}) == len(st.entries)
        for w in st.entries:
            assert w.src != w.dst
            assert not (w.src == DEAD and w.dst == DEAD)


def check_partition(p):
    """Every flow predicate of every entry variant feeds exactly one edge."""
    g = build_tfg(p)
    states = flow_states(p)
    for (fid, v), st in states.items():
        own = [e for e in g.edges if e.function == fid and e.variant == v]
        fed = [o for e in own if e.op != "payback" for o in e.consumes]
        assert sorted(fed) == sorted(w.origin for w in st.entries)
        # a payback consumes one flow from the hook body, never a caller flow
        pay = [o for e in own if e.op == "payback" for o in e.consumes]
        assert len(pay) == len(set(pay))
        assert not set(pay) & set(fed)
        assert len([e for e in own if e.op == "borrow"]) == len(pay)
    return g


def check_phi_scope(g):
    for e in g.edges:
        for name in logic.free_vars(e.phi):
            parts = decode_var(name)
            if parts[0] == "amt":
                continue
            _, token, addr = parts
            assert token in (e.src, e.dst)
            assert addr == e.address


@settings(max_examples=200)
@given(protocol_sources())
def test_partition_property(src):
    p = inline_calls(parse_protocol(src), 10)
    try:
        g = check_partition(p)
    except AmbiguousLoanPattern:
        assume(False)
    check_phi_scope(g)


def test_partition_on_mumug(mumug):
    check_phi_scope(check_partition(inline_calls(mumug)))
