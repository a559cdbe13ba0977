import json
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from crossscreen.cli import main
from crossscreen.core import ingest
from crossscreen.matching import paired_outcomes, read_pairs
from crossscreen.plan import load_schema
from crossscreen.stats import exact_p, make_scores

PKG = resources.files("crossscreen")
DATA = str(PKG.joinpath("data").joinpath("synthetic_panel.csv"))
PLAN_A = str(PKG.joinpath("plans").joinpath("team_a_three_stage.json"))
PLAN_B = str(PKG.joinpath("plans").joinpath("team_b_six_step.json"))
NULL = str(PKG.joinpath("scenarios").joinpath("all_null.json"))


@pytest.fixture(scope="module")
def pairs_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "pairs.csv"
    assert main(["match", "--data", DATA, "--out", str(path)]) == 0
    return str(path)


def _run(capsys, argv):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_validate(capsys):
    code, out, _ = _run(capsys, ["validate", "--data", DATA])
    assert code == 0 and json.loads(out)["subjects"] == 1000


def test_blind(capsys):
    code, out, _ = _run(capsys, ["blind", "--data", DATA])
    assert code == 0 and "out:" not in out and "cov:age" in out


def test_balance(capsys, pairs_file):
    code, out, _ = _run(capsys, ["balance", "--data", DATA, "--pairs", pairs_file])
    assert code == 0 and out.startswith("covariate,pre_match_std_diff")


def test_plan_validate_golden(capsys):
    code, out, _ = _run(capsys, ["plan-validate", "--plan", PLAN_A, "--budget", "0.025"])
    assert code == 0 and out.strip() == "valid"


def test_plan_validate_invalid(capsys, tmp_path):
    doc = json.loads(open(PLAN_A).read())
    doc["stages"][0]["tests"][0]["alpha"] = 0.04
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    code, out, _ = _run(capsys, ["plan-validate", "--plan", str(path), "--budget", "0.025"])
    assert code == 3 and "stage 1 sum 0.04 > 0.025" in out


def test_test_matches_exact_oracle(capsys, pairs_file):
    code, out, err = _run(capsys, ["test", "--data", DATA, "--pairs", pairs_file, "--outcome", "depression",
                                   "--stat", "W", "--direction", "greater", "--gamma", "1",
                                   "--part", "catholic", "--exact", "--seed", "5"])
    assert code == 0 and "seed: 5" in err
    res = json.loads(out)
    ds = ingest(DATA)
    by = ds.by_id()
    pairs = [p for p in read_pairs(pairs_file) if by[p.treated_id].split_level == "catholic"]
    y = paired_outcomes(ds, pairs)["depression"].diffs
    oracle = exact_p(make_scores(y, "W"), method="monte_carlo", draws=1_000_000, seed=5)
    assert res["exact_p"] == oracle
    assert abs(res["p_upper"] - oracle) < 0.005


def test_two_team_report(capsys, tmp_path, pairs_file):
    out_path = tmp_path / "report.json"
    code, _, err = _run(capsys, ["two-team", "--data", DATA, "--pairs", pairs_file, "--split", "split",
                                 "--plan-a", PLAN_A, "--plan-b", PLAN_B, "--modifier", "older=age:50",
                                 "--seed", "3", "--merge-fallback", "depression", "--out", str(out_path)])
    assert code == 0 and "seed: 3" in err
    report = json.loads(out_path.read_text())
    jsonschema.validate(report, load_schema("report.schema.json"))
    assert {"R1", "R2", "global", "replicable"} <= set(report)
    assert report["provenance"]["merged_fallbacks"] == ["depression"]


def test_two_team_needs_seed_for_gamma_rank_sum(capsys, pairs_file):
    code, _, err = _run(capsys, ["two-team", "--data", DATA, "--pairs", pairs_file,
                                 "--plan-a", PLAN_A, "--plan-b", PLAN_B, "--modifier", "older=age:50"])
    assert code == 2 and "--seed" in err


def test_out_dir_env(capsys, monkeypatch, tmp_path, pairs_file):
    monkeypatch.setenv("CROSSSCREEN_OUT_DIR", str(tmp_path))
    assert main(["holm-full", "--data", DATA, "--pairs", pairs_file, "--out", "holm.json"]) == 0
    assert "rejections" in json.loads((tmp_path / "holm.json").read_text())


def test_automated_and_multi(capsys, tmp_path, pairs_file):
    code, out, _ = _run(capsys, ["automated", "--data", DATA, "--pairs", pairs_file])
    assert code == 0 and "replicable" in json.loads(out)
    cfg = {"total_alpha": 0.05, "assignments": [
        {"explore": ["catholic"], "target": "other", "plan": PLAN_A},
        {"explore": ["other"], "target": "catholic", "plan": PLAN_A}]}
    path = tmp_path / "multi.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = _run(capsys, ["multi", "--data", DATA, "--pairs", pairs_file, "--config", str(path)])
    assert code == 0 and set(json.loads(out)["rejections"]) == {"catholic", "other"}
    cfg["assignments"][0]["explore"] = ["other"]
    path.write_text(json.dumps(cfg))
    code, _, err = _run(capsys, ["multi", "--data", DATA, "--pairs", pairs_file, "--config", str(path)])
    assert code == 3 and "OverlapViolation" in err


def test_ci_commands(capsys, tmp_path, pairs_file):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    a.write_text(json.dumps({"team": "A", "selected_on": "catholic", "outcomes": [{"outcome": "depression"}]}))
    b.write_text(json.dumps({"team": "B", "selected_on": "other", "outcomes": []}))
    code, out, _ = _run(capsys, ["ci", "fcr", "--data", DATA, "--pairs", pairs_file,
                                 "--selection-a", str(a), "--selection-b", str(b)])
    assert code == 0 and ",0.975," in out
    code, _, err = _run(capsys, ["ci", "simultaneous", "--data", DATA, "--pairs", pairs_file,
                                 "--selection-a", str(b), "--selection-b", str(a)])
    assert code == 3 and "SelectionLeak" in err


def test_simulate(capsys):
    code, out, err = _run(capsys, ["simulate", "--scenario", NULL, "--reps", "5", "--seed", "9",
                                   "--methods", "two_team,holm_full", "--format", "csv"])
    assert code == 0 and "seed: 9" in err and out.startswith("method,metric")
    code, _, err = _run(capsys, ["simulate", "--scenario", NULL, "--reps", "5"])
    assert code == 2


def test_usage_and_data_errors(capsys, tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["test", "--bogus"])
    assert e.value.code == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("id,split,treated,treat_time,out:y\na,s,1,,1\n")
    assert main(["validate", "--data", str(bad)]) == 3
    assert main(["validate", "--data", str(tmp_path / "missing.csv")]) == 3


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "crossscreen", "plan-validate", "--plan", PLAN_B],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "valid"
