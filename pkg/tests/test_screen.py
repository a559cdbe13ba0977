import itertools

import numpy as np
import pytest

from crossscreen.exceptions import BadP, BudgetExceeded, MissingOutcome, NoOutcomes, OverlapViolation
from crossscreen.plan import Finding, Plan, bundled_plan
from crossscreen.screen import (
    AutomatedConfig,
    MultiSplitConfig,
    PlanAssignment,
    holm_adjust,
    run_automated,
    run_holm_full,
    run_multi_split,
    run_two_team,
    screen_outcomes,
)
from crossscreen.stats import SIGNED_RANK, TestSpec

from conftest import paired


def closed_testing(pvals, alpha):
    """Reject H_i iff every intersection containing i is rejected by Bonferroni."""
    n = len(pvals)
    rejected = set()
    for i in range(n):
        ok = True
        for r in range(1, n + 1):
            for subset in itertools.combinations(range(n), r):
                if i in subset and not min(pvals[j] for j in subset) < alpha / len(subset):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            rejected.add(i)
    return rejected


def test_holm_examples():
    assert holm_adjust([0.001, 0.02, 0.03], 0.05) == {0, 1, 2}
    assert holm_adjust([], 0.05) == set()
    assert holm_adjust([0.5], 0.05) == set()
    assert holm_adjust([0.03, 0.001, 0.02], 0.05) == {0, 1, 2}


def test_holm_matches_closed_testing_sample():
    rng = np.random.default_rng(0)
    for _ in range(300):
        p = list(np.round(rng.uniform(0, 0.1, rng.integers(1, 6)), 3))
        assert holm_adjust(p, 0.05) == closed_testing(p, 0.05)


def test_holm_rejects_bad_p():
    with pytest.raises(BadP):
        holm_adjust([0.1, 1.2], 0.05)
    with pytest.raises(BadP):
        holm_adjust([float("nan")], 0.05)


def _data(effects, n=120, seed=0):
    rng = np.random.default_rng(seed)
    return {name: paired(name, rng.normal(mu, 1, n)) for name, mu in effects.items()}


def test_two_team_union_and_intersection():
    a = Plan.fixed_sequence("A", 0.025, [TestSpec("dep", SIGNED_RANK)])
    b = Plan.fixed_sequence("B", 0.025, [TestSpec("dep", SIGNED_RANK, gamma=1.2)])
    pa, pb = _data({"dep": 0.6}), _data({"dep": 0.6}, seed=1)
    rep = run_two_team(a, b, pa, pb, labels=("cath", "other"))
    assert rep.R1 == rep.R2 == {Finding("dep", "greater")}
    assert rep.replicable_findings == {Finding("dep", "greater")}
    assert rep.replicable_findings <= rep.global_findings


def test_two_team_one_sided_replication():
    a = bundled_plan("team_a_three_stage")
    b = bundled_plan("team_b_six_step")
    rng = np.random.default_rng(2)
    strong = {o: 0.8 for o in a.outcomes}
    strong["self_acceptance"] = -0.8
    strong["job_spells"] = 0.0
    part_b = _data(strong, seed=3)  # team A tests here
    part_a = _data({o: 0.0 for o in b.outcomes}, seed=4)
    g = rng.random(120) < 0.5
    part_a["low_positive"] = paired("low_positive", -np.abs(rng.normal(size=120)), older=g)
    part_a["depression"] = paired("depression", rng.normal(size=120), older=g)
    rep = run_two_team(a, b, part_a, part_b)
    assert rep.R1 == {Finding("depression", "greater"), Finding("self_acceptance", "less"),
                      Finding("divorces", "greater"), Finding("additional_children", "greater")}
    assert rep.R2 == frozenset()
    assert rep.replicable_findings == frozenset()
    assert rep.global_findings == rep.R1
    assert rep.parts["B"]["stopped_at_stage"] == 3


def test_empty_plans():
    rep = run_two_team(Plan("A", 0.025), Plan("B", 0.025), {}, {})
    assert rep.global_findings == frozenset() and rep.replicable_findings == frozenset()


def test_two_team_budget():
    with pytest.raises(BudgetExceeded):
        run_two_team(Plan("A", 0.04), Plan("B", 0.04), {}, {})


def test_multi_split_two_parts_equals_two_team():
    a = Plan.fixed_sequence("A", 0.025, [TestSpec("y", SIGNED_RANK)])
    b = Plan.fixed_sequence("B", 0.025, [TestSpec("y", SIGNED_RANK, "less")])
    pa, pb = _data({"y": 0.4}), _data({"y": -0.4}, seed=5)
    two = run_two_team(a, b, pa, pb)
    cfg = MultiSplitConfig(("A", "B"), (PlanAssignment({"A"}, "B", a), PlanAssignment({"B"}, "A", b)))
    multi = run_multi_split(cfg, {"A": pa, "B": pb})
    assert two.to_dict() == multi.to_dict()


def test_multi_split_four_parts():
    labels = ("cath_col", "cath_nocol", "other_col", "other_nocol")
    plans = [Plan.fixed_sequence(f"T{k}", 0.0125, [TestSpec("y", SIGNED_RANK)]) for k in range(4)]
    assignments = [PlanAssignment(set(labels) - {lab}, lab, p) for lab, p in zip(labels, plans)]
    data = {lab: _data({"y": 0.5}, seed=k) for k, lab in enumerate(labels)}
    rep = run_multi_split(MultiSplitConfig(labels, assignments, 0.05), data)
    assert rep.replication[Finding("y", "greater")] == sorted(labels)
    assert len(rep.pairwise_intersections()) == 6


def test_multi_split_rejects_overlap_and_budget():
    p = Plan("A", 0.025)
    with pytest.raises(OverlapViolation):
        MultiSplitConfig(("A", "B"), (PlanAssignment({"A", "B"}, "B", p),))
    with pytest.raises(OverlapViolation):
        MultiSplitConfig(("A", "B"), (PlanAssignment({"C"}, "B", p),))
    with pytest.raises(BudgetExceeded):
        MultiSplitConfig(("A", "B"), (PlanAssignment({"A"}, "B", Plan("x", 0.04)),
                                      PlanAssignment({"B"}, "A", Plan("y", 0.04))))


def test_report_serialization():
    a = Plan.fixed_sequence("A", 0.025, [TestSpec("y", SIGNED_RANK)])
    rep = run_two_team(a, a, _data({"y": 1.0}), _data({"y": 1.0}, seed=9), seed=4)
    d = rep.to_dict()
    assert d["R1"] == [{"outcome": "y", "direction": "greater"}]
    assert d["provenance"]["seed"] == 4 and len(d["provenance"]["plan_hashes"]) == 2
    assert "replicable findings:  y (greater)" in rep.to_text()


def test_screen_outcomes_direction():
    data = _data({"up": 0.8, "down": -0.8, "flat": 0.0})
    sel = dict(screen_outcomes(data, ["up", "down", "flat"], SIGNED_RANK, 0.025))
    assert set(sel) == {Finding("up", "greater"), Finding("down", "less")}
    with pytest.raises(MissingOutcome):
        screen_outcomes(data, ["nope"], SIGNED_RANK, 0.1)


def test_automated_no_selection():
    data = _data({"a": 0.0, "b": 0.0})
    rep = run_automated(AutomatedConfig(("a", "b"), screen_threshold=0.0), data, data)
    assert rep.global_findings == frozenset()


def test_automated_single_selected_is_plain_test():
    pi = _data({"a": 0.6, "b": 0.0}, seed=1)
    pii = _data({"a": 0.6, "b": 0.0}, seed=2)
    rep = run_automated(AutomatedConfig(("a", "b")), pi, pii)
    assert Finding("a", "greater") in rep.replicable_findings
    assert rep.parts["II"]["screened_on"] == "I"


def test_automated_needs_outcomes():
    with pytest.raises(NoOutcomes):
        run_automated(AutomatedConfig(()), {}, {})
    with pytest.raises(ValueError):
        AutomatedConfig(("a",), screen_threshold=1.5)


def test_holm_full_detects_shift():
    data = _data({"a": -1.0, "b": 0.0, "c": 0.0}, n=200)
    assert run_holm_full(["a", "b", "c"], data) == {Finding("a", "less")}
    assert run_holm_full([], data) == frozenset()
    with pytest.raises(MissingOutcome):
        run_holm_full(["zz"], data)


def test_holm_full_uses_both_directions():
    rng = np.random.default_rng(1)
    y = rng.normal(0.2, 1, 300)
    from crossscreen.stats import one_sided_pvalues
    up, down = one_sided_pvalues(y, "W")
    expected = {Finding("y", d) for i, d in enumerate(("greater", "less")) if i in holm_adjust([up, down], 0.05)}
    assert run_holm_full(["y"], {"y": paired("y", y)}) == expected
