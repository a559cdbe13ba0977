import json

import numpy as np
import pytest

from crossscreen.exceptions import BadScenario
from crossscreen.plan import load_schema
from crossscreen.sim import (
    EDA_NOTE,
    METHODS,
    MethodConfig,
    Scenario,
    TeamProxy,
    generate,
    load_scenario,
    mc_se,
    null_scenario,
    run_comparison,
)

import jsonschema
from importlib import resources


def test_generate_null_means():
    sc = null_scenario(n_parts=1, n_outcomes=3, pairs=10_000)
    data = generate(sc, 0)["P1"]
    for po in data.values():
        assert abs(po.diffs.mean()) < 4 / np.sqrt(10_000)


def test_generate_correlation():
    sc = null_scenario(n_parts=1, n_outcomes=2, pairs=10_000)
    d = generate(sc, 1)["P1"]
    assert abs(np.corrcoef(d["y1"].diffs, d["y2"].diffs)[0, 1]) < 0.05
    sc = Scenario([("P1", 10_000)], ["a", "b"], [[0, 0]], outcome_correlation=0.5)
    d = generate(sc, 1)["P1"]
    assert abs(np.corrcoef(d["a"].diffs, d["b"].diffs)[0, 1] - 0.5) < 0.05


def test_generate_effects_and_t_noise():
    sc = Scenario([("P1", 20_000), ("P2", 50)], ["a"], [[0.5], [0.0]], noise="t", df=5)
    d = generate(sc, 0)
    assert abs(d["P1"]["a"].diffs.mean() - 0.5) < 0.05
    assert abs(d["P1"]["a"].diffs.std() - 1.0) < 0.05
    assert len(d["P2"]["a"]) == 50


def test_generate_deterministic():
    sc = null_scenario(pairs=20)
    a, b = generate(sc, 3), generate(sc, 3)
    assert np.array_equal(a["P1"]["y1"].diffs, b["P1"]["y1"].diffs)
    assert not np.array_equal(a["P1"]["y1"].diffs, generate(sc, 4)["P1"]["y1"].diffs)


@pytest.mark.parametrize("kwargs", [
    dict(parts=[("a", 1)], outcomes=["y"], effect_matrix=[[0]]),
    dict(parts=[("a", 5)], outcomes=["y"], effect_matrix=[[0, 0]]),
    dict(parts=[("a", 5)], outcomes=["y"], effect_matrix=[[0]], outcome_correlation=1.0),
    dict(parts=[("a", 5)], outcomes=["y"], effect_matrix=[[0]], noise="t"),
    dict(parts=[("a", 5)], outcomes=["y"], effect_matrix=[[0]], replications=0),
    dict(parts=[("a", 5), ("a", 5)], outcomes=["y"], effect_matrix=[[0], [0]]),
])
def test_bad_scenarios(kwargs):
    with pytest.raises(BadScenario):
        Scenario(**kwargs)


def test_bad_proxy_and_method():
    with pytest.raises(BadScenario):
        TeamProxy(screen_threshold=0)
    with pytest.raises(BadScenario):
        TeamProxy(max_tests=0)
    with pytest.raises(BadScenario):
        MethodConfig("nope")


def test_bundled_scenarios_validate():
    schema = load_schema("scenario.schema.json")
    for name in ("all_null", "effect_part1_only", "effects_both_parts"):
        path = resources.files("crossscreen").joinpath("scenarios").joinpath(f"{name}.json")
        jsonschema.validate(json.loads(path.read_text()), schema)
        sc = load_scenario(path)
        assert Scenario.from_dict(sc.to_dict()).to_dict() == sc.to_dict()


def test_every_method_runs():
    sc = Scenario([("P1", 60), ("P2", 60)], [f"y{k}" for k in range(4)],
                  [[0.8, 0, 0, 0], [0.8, 0, 0, 0]], replications=3, seed=1)
    table = run_comparison(sc, list(METHODS))
    assert set(table.metrics) == set(METHODS)
    for vals in table.metrics.values():
        assert all(0 <= v <= 1 for v in vals.values())
    assert table.note == EDA_NOTE
    jsonschema.validate(table.to_dict(), load_schema("metrics.schema.json"))
    assert table.to_csv().startswith("method,metric,value,mc_se")
    assert EDA_NOTE in table.to_text()


def test_leave_one_out_reports_parts():
    sc = Scenario([("P1", 60), ("P2", 60)], ["a", "b"], [[1.0, 0], [1.0, 0]], replications=2)
    table = run_comparison(sc, ["three_team_leave_one_out"])
    parts = {p for p, _, _ in table.rejection_rates["three_team_leave_one_out"]}
    assert parts <= {"S1", "S2", "S3"} and parts


def test_strong_effect_power():
    sc = Scenario([("P1", 100), ("P2", 100)], ["a", "b"], [[1.0, 0], [1.0, 0]], replications=5)
    t = run_comparison(sc, ["two_team", "holm_full"])
    assert t.metrics["two_team"]["replicability"] == 1.0
    assert t.metrics["holm_full"]["power"] == 1.0


def test_reproducible_and_worker_invariant():
    sc = null_scenario(pairs=40, n_outcomes=3, replications=6, seed=5)
    a = run_comparison(sc, ["two_team", "single_split"])
    b = run_comparison(sc, ["two_team", "single_split"], workers=2)
    assert a.metrics == b.metrics and a.rejection_rates == b.rejection_rates


def test_mc_se():
    assert mc_se(0.05, 5000) == pytest.approx(np.sqrt(0.05 * 0.95 / 5000))
