import json

import pytest

from crossscreen.exceptions import MissingOutcome, SchemaViolation, TestFailed
from crossscreen.plan import (
    Finding,
    Plan,
    PlannedTest,
    Stage,
    bundled_plan,
    execute_plan,
    parse_plan,
    plan_from_dict,
    validate_plan,
)
from crossscreen.stats import SIGNED_RANK, StatisticKind, TestSpec

from conftest import paired


def _spec(outcome, direction="greater", gamma=1.0, stat=SIGNED_RANK):
    return TestSpec(outcome, stat, direction, gamma)


def _const(values):
    """Evaluator returning fixed p-values by outcome."""
    return lambda spec, data: values[spec.outcome]


def test_team_a_structure():
    plan = bundled_plan("team_a_three_stage")
    assert plan.budget == 0.025
    got = [[(t.spec.outcome, t.spec.statistic.label, t.alpha) for t in st.tests] for st in plan.stages]
    assert got == [
        [("depression", "ustat(8,6,7)", 0.025)],
        [("self_acceptance", "ustat(8,5,8)", 0.0125),
         ("additional_children", "signed_rank", 0.00625),
         ("divorces", "signed_rank", 0.00625)],
        [("job_spells", "ustat(8,7,8)", 0.025)],
    ]
    assert [st.alpha_sum for st in plan.stages] == [0.025, 0.025, 0.025]
    assert validate_plan(plan, 0.025) == []


def test_team_b_structure():
    plan = bundled_plan("team_b_six_step")
    assert len(plan.stages) == 6
    assert all(len(st.tests) == 1 and st.tests[0].alpha == 0.025 for st in plan.stages)
    gammas = [st.tests[0].spec.gamma for st in plan.stages]
    assert gammas == [1, 1.2, 1, 1, 1.2, 1.2]
    kinds = [st.tests[0].spec.statistic.kind for st in plan.stages]
    assert kinds.count("rank_sum") == 2
    assert validate_plan(plan, 0.025) == []


def _doc(**over):
    doc = {"team": "X", "budget": 0.025, "stages": [{"tests": [
        {"outcome": "y", "statistic": {"kind": "signed_rank"}, "direction": "greater",
         "gamma": 1, "alpha": 0.025}]}]}
    doc.update(over)
    return doc


def test_alpha_zero_is_schema_violation():
    doc = _doc()
    doc["stages"][0]["tests"][0]["alpha"] = 0
    with pytest.raises(SchemaViolation) as e:
        plan_from_dict(doc)
    assert "alpha" in str(e.value)


@pytest.mark.parametrize("mutate", [
    lambda d: d["stages"][0]["tests"][0].update(statistic={"kind": "median"}),
    lambda d: d["stages"][0]["tests"][0].update(direction="up"),
    lambda d: d["stages"][0]["tests"][0].pop("outcome"),
    lambda d: d.update(stages=[]),
    lambda d: d.update(extra=1),
    lambda d: d["stages"][0]["tests"][0].update(statistic={"kind": "ustat", "m": 3, "m_lo": 4, "m_hi": 4}),
])
def test_schema_rejections(mutate):
    doc = _doc()
    mutate(doc)
    with pytest.raises(SchemaViolation):
        plan_from_dict(doc)


def test_parse_plan_file(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps(_doc()))
    assert parse_plan(path).stages[0].tests[0].spec.outcome == "y"
    path.write_text("{not json")
    with pytest.raises(SchemaViolation):
        parse_plan(path)


def test_validate_flags_stage_sum():
    plan = Plan("X", 0.025, [Stage([PlannedTest(_spec("a"), 0.02), PlannedTest(_spec("b"), 0.02)])])
    assert validate_plan(plan) == ["stage 1 sum 0.04 > 0.025"]


def test_validate_flags_duplicates_and_budget():
    plan = Plan("X", 0.05, [Stage([PlannedTest(_spec("a"), 0.01), PlannedTest(_spec("a"), 0.01)])])
    problems = validate_plan(plan, budget=0.025)
    assert any("duplicate" in p for p in problems)
    assert any("budget" in p for p in problems)


def test_fixed_sequence_valid():
    plan = Plan.fixed_sequence("X", 0.025, [_spec("a"), _spec("b"), _spec("c", "less")])
    assert validate_plan(plan) == []
    assert all(st.tests[0].alpha == 0.025 for st in plan.stages)


def test_team_b_fails_first_test():
    plan = bundled_plan("team_b_six_step")
    res = execute_plan(plan, {o: None for o in plan.outcomes}, evaluator=_const(
        {"low_positive": 0.2, "depression": 0.0001}))
    assert res.rejections == frozenset()
    assert res.stopped_at_stage == 1
    assert [t.tested for t in res.tests] == [True] + [False] * 5


def test_team_a_stage_three_fails():
    plan = bundled_plan("team_a_three_stage")
    p = {"depression": 0.01, "self_acceptance": 0.001, "additional_children": 0.002,
         "divorces": 0.003, "job_spells": 0.3}
    res = execute_plan(plan, {o: None for o in p}, evaluator=_const(p))
    assert res.rejections == {Finding("depression", "greater"), Finding("self_acceptance", "less"),
                              Finding("additional_children", "greater"), Finding("divorces", "greater")}
    assert res.stopped_at_stage == 3
    assert res.all_stages_tested


def test_stage_partial_failure_stops():
    plan = bundled_plan("team_a_three_stage")
    p = {"depression": 0.01, "self_acceptance": 0.001, "additional_children": 0.01,
         "divorces": 0.003, "job_spells": 0.0}
    res = execute_plan(plan, {o: None for o in p}, evaluator=_const(p))
    assert res.stopped_at_stage == 2
    assert Finding("self_acceptance", "less") in res.rejections
    assert not res.tests[-1].tested and res.tests[-1].p_value is None


def test_strict_inequality():
    plan = Plan("X", 0.025, [Stage([PlannedTest(_spec("y"), 0.025)])])
    res = execute_plan(plan, {"y": None}, evaluator=lambda s, d: 0.025)
    assert res.rejections == frozenset() and res.stopped_at_stage == 1


def test_all_rejected_completes():
    plan = Plan.fixed_sequence("X", 0.025, [_spec("y")])
    res = execute_plan(plan, {"y": paired("y", [1.0] * 30)})
    assert res.stopped_at_stage == "completed"


def test_missing_outcome_and_wrapped_failure():
    plan = Plan.fixed_sequence("X", 0.025, [_spec("y")])
    with pytest.raises(MissingOutcome):
        execute_plan(plan, {})
    with pytest.raises(TestFailed) as e:
        execute_plan(plan, {"y": paired("y", [0.0, 0.0])})
    assert e.value.stage == 1 and e.value.outcome == "y"


def test_content_hash_stable():
    assert bundled_plan("team_a_three_stage").content_hash() == bundled_plan("team_a_three_stage").content_hash()
    assert bundled_plan("team_a_three_stage").content_hash() != bundled_plan("team_b_six_step").content_hash()


def test_real_statistics_run():
    plan = bundled_plan("team_a_three_stage")
    data = {o: paired(o, [1.0 + 0.1 * k for k in range(20)]) for o in plan.outcomes}
    data["self_acceptance"] = paired("self_acceptance", [-1.0 - 0.1 * k for k in range(20)])
    res = execute_plan(plan, data)
    assert res.stopped_at_stage == "completed" and len(res.rejections) == 5
