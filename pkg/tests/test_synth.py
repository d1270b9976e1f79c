from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foray import logic
from foray.afl import Borrow, Payback, Swap, complete, sketch_from_path
from foray.goal import Cmp, Num, profit_goal
from foray.ir import inline_calls
from foray.sim import execute, validate
from foray.solver import Model
from foray.synth import BudgetError, SynthConfig, learn_conflict, radius_fraction, synthesize
from foray.tfg import build_tfg

ATTACK_PATH = ("e1", "e4", "e3", "e2")


@pytest.fixture(scope="module")
def mumug_sketch(mumug):
    g = build_tfg(inline_calls(mumug))
    return sketch_from_path([g.edge(e) for e in ATTACK_PATH])


def holds(formula, model):
    return bool(logic.evaluate(formula, dict(model)))


def test_mumug_attack(mumug, mumug_state, fixture_session):
    report = synthesize(mumug, mumug_state, session=fixture_session)
    assert report.found
    ops = report.program.ops
    assert [type(op) for op in ops] == [Borrow, Swap, Swap, Payback]
    assert (ops[1].market, ops[2].market) == ("PairAMM", "Mubank")
    assert report.profit["USDCe"] > 0
    assert all(Fraction(v).denominator == 1 for _, v in report.program.binding)
    # independent re-run from s0
    v = validate(report.program, mumug_state, profit_goal("USDCe"))
    assert v.passed
    assert v.end.balance("USDCe", "attacker") == report.profit["USDCe"]


def test_unreachable_goal(mumug, mumug_state, fixture_session):
    report = synthesize(mumug, mumug_state, [Cmp("<", Num(Fraction(0)), Num(Fraction(0)))],
                        session=fixture_session)
    assert report.outcome == "exhausted" and report.program is None
    assert report.sketches_tried == 0


def test_patched_exhausted(mumug, patched_state, fixture_session):
    report = synthesize(mumug, patched_state, session=fixture_session)
    assert not report.found
    assert report.models_tried == 0


def test_no_goals(mumug, mumug_state, fixture_session):
    report = synthesize(mumug, mumug_state, [], session=fixture_session)
    assert report.outcome == "exhausted" and report.goal == ""


def test_deterministic_report(mumug, mumug_state, fixture_session):
    a = synthesize(mumug, mumug_state, session=fixture_session).to_json(timing=False)
    b = synthesize(mumug, mumug_state, session=fixture_session).to_json(timing=False)
    assert a == b
    assert '"timing"' not in a


def test_kappa_models_distinct(mumug, mumug_state, fixture_session):
    report = synthesize(mumug, mumug_state, session=fixture_session)
    for attempt in report.attempts:
        hashes = [m["model"] for m in attempt["models"] if "model" in m]
        assert len(hashes) == len(set(hashes))
    assert [c.name for c in report.kappa] == [f"kb.{i}" for i in range(1, len(report.kappa) + 1)]


def test_budget_errors():
    with pytest.raises(BudgetError):
        SynthConfig(max_depth=0)
    with pytest.raises(BudgetError):
        SynthConfig(radius_base=Fraction(1), radius_cap=Fraction(1, 2))


def test_radius_schedule():
    base, cap = Fraction(1, 100), Fraction(1, 20)
    got = [radius_fraction(n, base, cap) for n in range(1, 7)]
    assert got == [0, Fraction(1, 100), Fraction(2, 100), Fraction(4, 100), cap, cap]


def _model(**kw):
    return Model({k: Fraction(v) for k, v in kw.items()})


def test_revert_blames_prefix(mumug_sketch, mumug_state):
    """Swapping more MU than was borrowed reverts at op 2; the clause covers ops 1-2 only."""
    model = _model(h1=100, h2=500, h3=0, h4=10, h5=0, h6=101)
    verdict = validate(complete(mumug_sketch, model), mumug_state, profit_goal("USDCe"))
    assert verdict.trace.revert.op_index == 2
    clause = learn_conflict(mumug_sketch, model, verdict, name="kb.1")
    assert clause.scope == ATTACK_PATH[:2]
    assert set(logic.free_vars(clause.formula)) == {"h1", "h2", "h3"}
    assert not holds(clause.formula, model.values)
    # oracle: later holes cannot rescue the run
    for h4, h6 in [(0, 0), (7, 200), (10**5, 10**6)]:
        other = _model(h1=100, h2=500, h3=0, h4=h4, h5=0, h6=h6)
        again = execute(complete(mumug_sketch, other), mumug_state)
        assert again.revert.op_index == 2


def test_goal_miss_blames_everything(mumug_sketch, mumug_state):
    model = _model(h1=0, h2=0, h3=0, h4=0, h5=0, h6=0)
    verdict = validate(complete(mumug_sketch, model), mumug_state, profit_goal("USDCe"))
    assert not verdict.passed and verdict.trace.revert is None
    clause = learn_conflict(mumug_sketch, model, verdict, name="kb.1")
    assert clause.scope == ATTACK_PATH
    assert set(logic.free_vars(clause.formula)) == set(mumug_sketch.holes)
    assert clause.reason == "GoalNotMet"


hole_values = st.integers(1, 10**6)


@settings(max_examples=300)
@given(st.lists(hole_values, min_size=6, max_size=6), st.sampled_from([0, 1, 2, 5]),
       st.integers(1, 6), st.integers(-3, 3))
def test_clause_excludes_ball(mumug_sketch, mumug_state, values, failures, which, step):
    """The learned clause rejects the model and every point within the radius, and nothing beyond."""
    model = Model({f"h{i}": Fraction(v) for i, v in enumerate(values, start=1)})
    verdict = validate(complete(mumug_sketch, model), mumug_state, profit_goal("USDCe"))
    if verdict.passed:
        return
    radius = radius_fraction(failures, Fraction(1, 100), Fraction(1, 2))
    clause = learn_conflict(mumug_sketch, model, verdict, name="kb.1", radius=radius)
    assert not holds(clause.formula, model.values)
    blamed = sorted(logic.free_vars(clause.formula))
    name = blamed[(which - 1) % len(blamed)]
    v = model[name]
    near = dict(model.values)
    near[name] = v + v * radius * Fraction(step, 3)
    assert not holds(clause.formula, near)
    far = dict(model.values)
    far[name] = v + v * radius + 1
    assert holds(clause.formula, far)
