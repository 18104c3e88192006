import itertools

import pytest
from hypothesis import given, strategies as st

from subroute.domain import Assignment, Subtask
from subroute.evaluation.cost import CostModel, TokenCounter, cost_of, estimate_tokens
from subroute.evaluation.cpt import CptCurve, cpt, cpt_csv, cpt_of_curve, cpt_rows
from subroute.evaluation.oracle import (
    incorrect_assignment_rate,
    oracle_assign,
    oracle_workload,
)
from subroute.evaluation.policies import (
    Judge,
    JudgeMode,
    LatencyModel,
    Policy,
    PolicyReport,
    evaluate_policy,
    parse_policy,
    run_policy,
)
from subroute.router import ExecutedUnit, RoutedExecution, RouterConfig
from subroute.world import TreeWorld

from builders import LLM, SLM, BitTree

# cost

def _unit(model, prompt_tokens=None, completion_tokens=None, prompt="", output="out"):
    return ExecutedUnit(Subtask(1, "x", model), model, output, prompt, prompt_tokens, completion_tokens)


def _execution(units):
    return RoutedExecution("r", (), tuple(units), "done", True)


def test_cost_examples():
    assert cost_of(_execution([_unit(SLM, 900, 900)] * 3)) == 0.0
    three = _execution([_unit(LLM, 500, 0)] * 3)
    assert cost_of(three, CostModel(llm_usd_per_1k_prompt_tokens=0.01)) == pytest.approx(0.015, abs=1e-12)


def test_cost_additivity():
    units = [_unit(LLM, 120, 30), _unit(LLM, 80, 10), _unit(LLM, 50, 5)]
    mixed = [units[0], _unit(SLM, 80, 10), units[2]]
    full = cost_of(_execution(units))
    assert cost_of(_execution(mixed)) == pytest.approx(full - CostModel().unit_cost(units[1]), abs=1e-12)


def test_cost_estimates_tokens_from_words():
    assert estimate_tokens("one two three") == pytest.approx(4.0)
    u = _unit(LLM, prompt="a b c", output="d e f")
    assert CostModel().unit_cost(u) == pytest.approx(8 / 1000 * 0.01)
    with pytest.raises(ValueError):
        CostModel(token_counter=TokenCounter.EXACT).unit_cost(u)
    with pytest.raises(ValueError):
        CostModel(llm_usd_per_1k_prompt_tokens=-1)


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 5000), st.integers(0, 5000)), min_size=1, max_size=10),
       st.integers(1, 5))
def test_cost_linear_and_zero_iff_no_llm(spec, factor):
    units = [_unit(LLM if is_llm else SLM, p, c) for is_llm, p, c in spec]
    scaled = [_unit(u.model, u.prompt_tokens * factor, u.completion_tokens * factor) for u in units]
    base = cost_of(_execution(units))
    assert cost_of(_execution(scaled)) == pytest.approx(base * factor)
    if not any(u.model is LLM and (u.prompt_tokens or u.completion_tokens) for u in units):
        assert base == 0.0
    else:
        assert base > 0.0


# CPT

def test_cpt_three_point_example():
    pts = [(0.2, 0.50), (0.5, 0.70), (0.8, 0.90)]
    assert cpt(pts, 0.40, 0.90, 50).value == 0.5


def test_cpt_degenerate_gap():
    r = cpt([(0.3, 0.6)], 0.6, 0.6, 70)
    assert r.value == 0.0 and r.degenerate


def test_cpt_unattainable_at_100():
    r = cpt([(0.2, 0.5), (0.9, 0.85)], 0.4, 0.9, 100)
    assert not r.attainable
    row = cpt_rows("d", {"M": CptCurve(((0.2, 0.5),), 0.4, 0.9)})[0]
    assert row[-1] == "unattainable"
    assert cpt_csv([row]).splitlines()[0] == "dataset,method,cpt50,cpt70,cpt90"


def test_cpt_from_reports():
    rep = PolicyReport("HERA", "w", 10, 0.7, 0.6, 1.0, 5.0, 0.1, 20.0)
    assert cpt([("t", rep)], 0.4, 0.9, 50).value == pytest.approx(0.4)


def test_cpt_validates():
    with pytest.raises(ValueError):
        cpt([(0.2, 0.5)], 0.4, 0.9, 0)
    with pytest.raises(ValueError):
        CptCurve(((1.2, 0.5),), 0.4, 0.9)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=8),
       st.floats(0, 1), st.floats(0, 1))
def test_cpt_monotone_in_x(points, a, b):
    lo, hi = sorted((a, b))
    curve = CptCurve(tuple(points), lo, hi)
    vals = [cpt_of_curve(curve, x).value for x in (50, 70, 90)]
    finite = [v for v in vals if v is not None]
    assert finite == sorted(finite)
    # once unattainable, every higher level is too
    assert all(v is None for v in vals[len(finite):])


# policies and reports

def test_all_slm_all_llm_reports(small_workload):
    world, suite, reqs = small_workload.world(), small_workload.suite(), small_workload.requests
    slm = run_policy(Policy.all_slm(), suite, world, reqs)
    llm = run_policy(Policy.all_llm(), suite, world, reqs)
    assert slm.slm_usage == 1.0 and slm.cost_usd == 0.0
    assert llm.slm_usage == 0.0 and llm.cost_usd > 0
    assert llm.accuracy >= slm.accuracy


def test_accuracy_ordering_and_oracle_bound(small_workload):
    world, suite, reqs = small_workload.world(), small_workload.suite(), small_workload.requests
    slm = run_policy(Policy.all_slm(), suite, world, reqs)
    llm = run_policy(Policy.all_llm(), suite, world, reqs)
    hera = run_policy(Policy.hera(), suite, world, reqs)
    assert llm.accuracy >= hera.accuracy >= slm.accuracy
    # oracle at HERA's own accuracy floor uses at least as much SLM
    ow = oracle_workload(world, reqs, all_llm_accuracy=hera.accuracy, floor_frac=1.0)
    assert ow.floor_met and ow.report.accuracy >= hera.accuracy - 1e-12
    assert ow.report.slm_usage >= hera.slm_usage


def test_random_policy_reproducible(small_workload):
    world, suite, reqs = small_workload.world(), small_workload.suite(), small_workload.requests
    a = evaluate_policy(Policy.random(0.5, seed=4), suite, world, reqs)
    b = evaluate_policy(Policy.random(0.5, seed=4), suite, world, reqs)
    assert a.report == b.report
    assert [e.assignment for e in a.executions] == [e.assignment for e in b.executions]


def test_report_fields_and_latency():
    ex = _execution([_unit(SLM), _unit(LLM)])
    assert LatencyModel().of(ex) == pytest.approx(3.0 + 5.5 + 0.58)
    with pytest.raises(ValueError):
        PolicyReport("p", "w", 1, 1.5, 0.5, 1.0, 1.0, 0.0, 0.0)


def test_parse_policy():
    assert parse_policy("ALL_SLM").name == "ALL_SLM"
    assert parse_policy("random(0.3)").p_llm == 0.3
    assert parse_policy("CLASSIFIER(0.8)").name == "CLASSIFIER(0.8)"
    h = parse_policy("HERA(0.9)")
    assert h.name == "HERA(0.9)" and h.config.urc_threshold == 0.9
    assert parse_policy("HERA", RouterConfig(cd_horizon=2)).config.cd_horizon == 2
    for bad in ("ALL_LLM(0.5)", "NOPE", "RANDOM(2)"):
        with pytest.raises(ValueError):
            parse_policy(bad)


def test_judge_modes():
    j = Judge()
    assert j.correct("42", "42.0")
    assert not j.correct("41", "42")
    assert j.correct("alpha beta gamma", "alpha beta gamma")
    assert not j.correct("", "x")
    assert Judge(JudgeMode.EXACT).correct(" same ", "same")
    assert not Judge(JudgeMode.EXACT).correct("same words", "words same")


# oracle

def _oracle(depth, good):
    tree = BitTree(depth, good)
    return oracle_assign(TreeWorld([tree]), tree.request, Judge(JudgeMode.EXACT))


def test_oracle_all_correct_is_all_slm():
    r = _oracle(3, lambda b: True)
    assert r.assignment.bits() == "000" and r.correct and r.n_leaves == 8


def test_oracle_needs_llm_at_position_three():
    r = _oracle(3, lambda b: b[2] == "1")
    assert r.assignment.choices == (SLM, SLM, LLM)


def test_oracle_no_correct_leaf():
    r = _oracle(3, lambda b: False)
    assert r.assignment.bits() == "111" and r.floor_unreachable and not r.correct


def test_oracle_prefers_late_slm_on_ties():
    r = _oracle(3, lambda b: b.count("0") <= 1)
    assert r.assignment.bits() == "110"


def test_oracle_beam_flags_approximate():
    tree = BitTree(6, lambda b: b.endswith("1"))
    r = oracle_assign(TreeWorld([tree]), tree.request, Judge(JudgeMode.EXACT), cap=4, beam=8)
    assert r.approximate and r.assignment.bits() == "000001"


@pytest.mark.parametrize("depth", [1, 2, 3, 4])
def test_oracle_matches_product_enumeration(depth):
    for mask in range(0, 2 ** (2 ** depth), max(1, 2 ** (2 ** depth) // 64)):
        good = lambda b, m=mask: bool(m >> int(b, 2) & 1)
        r = _oracle(depth, good)
        ok = ["".join(bits) for bits in itertools.product("01", repeat=depth) if good("".join(bits))]
        if not ok:
            assert r.floor_unreachable
            continue
        best = max(b.count("0") for b in ok)
        assert r.assignment.bits().count("0") == best
        assert good(r.assignment.bits())


def test_oracle_workload_relaxes_to_floor():
    trees = [BitTree(3, lambda b: b[0] == "1", rid=f"t{i}") for i in range(10)]
    world = TreeWorld(trees)
    reqs = [t.request for t in trees]
    strict = oracle_workload(world, reqs, judge=Judge(JudgeMode.EXACT), floor_frac=1.0)
    assert strict.report.accuracy == 1.0 and all(a.bits() == "100" for a in strict.assignments)
    loose = oracle_workload(world, reqs, judge=Judge(JudgeMode.EXACT), floor_frac=0.8)
    assert loose.report.accuracy == pytest.approx(0.8) and loose.floor_met
    assert sum(a.bits() == "000" for a in loose.assignments) == 2


def test_incorrect_assignment_rate_examples():
    a = Assignment.from_bits
    assert incorrect_assignment_rate([a("010")], [a("010")]) == 0.0
    assert incorrect_assignment_rate([a("010")], [a("101")]) == 1.0
    assert incorrect_assignment_rate([a("010")], [a("000")]) == pytest.approx(1 / 3)
    # unequal lengths: extra positions count as mismatches
    assert incorrect_assignment_rate([a("00")], [a("0001")]) == pytest.approx(2 / 4)
    with pytest.raises(ValueError):
        incorrect_assignment_rate([a("0")], [])
