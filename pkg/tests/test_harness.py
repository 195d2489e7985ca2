import argparse
import csv
import io
import json
import math
import subprocess
import sys

import pytest

from clup.harness import (ExperimentConfig, ResultRecord, _aggregate, cmd_ml, cmd_predict, cmd_scan, cmd_simulate,
                          cmd_stationary, main, parse_list, to_csv, to_json, trial_seed)
from clup.rdt_clup import RdtParams, r_plt_theory


def read_csv(text):
    lines = text.splitlines()
    assert lines[0].startswith("# clup-results schema=1")
    return list(csv.DictReader(lines[1:]))


def test_parse_list():
    assert parse_list("1,2.5") == (1.0, 2.5)
    assert parse_list("8:10:0.5") == (8.0, 8.5, 9.0, 9.5, 10.0)
    assert parse_list("0.1:0.3:0.1") == (0.1, 0.2, 0.3)
    with pytest.raises(argparse.ArgumentTypeError):
        parse_list("1:2")
    with pytest.raises(argparse.ArgumentTypeError):
        parse_list("1,x")


def test_config_validation():
    for bad in ({"command": "nope"}, {"command": "predict", "trials": 0},
                {"command": "predict", "snr_db_list": ()}, {"command": "predict", "workers": 0}):
        with pytest.raises(ValueError):
            ExperimentConfig(**bad)


def test_trial_seeds_are_distinct():
    seeds = {trial_seed(s, t) for s in range(3) for t in range(100)}
    assert len(seeds) == 300


def test_predict_row_and_polytope_equivalence():
    recs = cmd_predict(ExperimentConfig("predict", snr_db_list=(12.0,), r_sc_list=(1.0, 1.1)))
    assert not any(r.error for r in recs)
    one, r11 = (r.outputs for r in recs)
    assert abs(r11["perr"] / 2.886e-3 - 1) < 0.05
    assert abs(r11["c2"] - 0.8628) < 1e-3 and abs(r11["c1"] - 0.9105) < 1e-3
    assert one["c2"] == pytest.approx(one["c2_plt"], abs=1e-6)
    assert one["c1"] == pytest.approx(one["c1_plt"], abs=1e-6)
    assert one["perr"] == pytest.approx(one["perr_plt"], rel=1e-5)


def test_byte_identical_rerun(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    outs = []
    for k in range(2):
        path = tmp_path / f"run{k}.csv"
        assert main(["predict", "--snr-db", "11,12", "--r-sc", "1.1", "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    assert b"2023-11-14T22:13:20Z" in outs[0]


def test_simulate_smoke_schema(tmp_path):
    path = tmp_path / "sim.csv"
    assert main(["simulate", "--n", "60", "--trials", "2", "--snr-db", "12", "--baselines",
                 "--out", str(path)]) == 0
    rows = read_csv(path.read_text())
    assert [r["trial"] for r in rows] == ["0", "1", "all"]
    for r in rows[:2]:
        assert r["kind"] == "simulation" and r["error"] == ""
        assert int(r["bit_errors"]) >= 0 and r["converged"] in ("true", "false")
        assert float(r["max_objective_drop"]) <= 1e-9
        assert r["seed"] == str(trial_seed(0, int(r["trial"])))
        for key in ("plt_bit_errors", "ball_bit_errors", "ml_bit_errors"):
            assert int(r[key]) >= 0
    agg = rows[2]
    assert agg["count"] == "2" and agg["failures"] == "0"
    assert float(agg["ber"]) == pytest.approx((int(rows[0]["bit_errors"]) + int(rows[1]["bit_errors"])) / 120)


def test_simulate_independent_of_worker_count():
    base = dict(n=40, trials=3, snr_db_list=(11.0,))
    a = cmd_simulate(ExperimentConfig("simulate", workers=1, **base))
    b = cmd_simulate(ExperimentConfig("simulate", workers=2, **base))
    assert [r.outputs for r in a] == [r.outputs for r in b]


def test_aggregate_standard_errors():
    rows = [{"c2": 0.8, "c1": 0.9, "iterations": 10, "converged": True, "bit_errors": 2},
            {"c2": 0.9, "c1": 0.95, "iterations": 12, "converged": False, "bit_errors": 0}]
    agg = _aggregate(rows, 100)
    assert agg["mean_c2"] == pytest.approx(0.85)
    assert agg["se_c2"] == pytest.approx(0.05)
    assert agg["converged_fraction"] == 0.5
    assert agg["ber"] == 0.01 and agg["ber_se"] == pytest.approx(math.sqrt(0.01 * 0.99 / 200))
    assert _aggregate([], 100) == {"count": 0}


def test_failed_trials_are_recorded_and_counted():
    # a theoretical radius far below the box minimum makes every inner problem infeasible
    cfg = ExperimentConfig("simulate", n=40, trials=2, r_sc_list=(0.2,), radius_mode="theoretical")
    recs = cmd_simulate(cfg)
    assert all(r.error for r in recs[:2])
    assert recs[2].outputs["failures"] == 2 and recs[2].outputs["count"] == 0
    assert main(["simulate", "--n", "40", "--r-sc", "0.2", "--radius-mode", "theoretical", "--out", "/dev/null"]) == 1


def test_stationary_rows():
    recs = cmd_stationary(ExperimentConfig("stationary", snr_db_list=(10.0,), r_list=(0.225173,)))
    assert len(recs) == 2 and not any(r.error for r in recs)
    got = sorted((r.outputs["c2"], r.outputs["c1"]) for r in recs)
    assert abs(got[0][0] - 0.46075) < 1e-3 and abs(got[1][0] - 0.93035) < 1e-3
    assert abs(got[0][1] - 0.56459) < 1e-3 and abs(got[1][1] - 0.94857) < 1e-3


def test_stationary_from_r_sc():
    recs = cmd_stationary(ExperimentConfig("stationary", snr_db_list=(10.0,), r_sc_list=(1.3,)))
    r_plt = r_plt_theory(RdtParams.from_snr_db(0.8, 10)).r_plt
    assert all(r.inputs["r"] == pytest.approx(1.3 * r_plt) for r in recs)


def test_scan_counts_two_minima():
    grid = tuple(0.6 + 0.378 * k / 399 for k in range(400))
    recs = cmd_scan(ExperimentConfig("scan", snr_db_list=(9.0,), fixed=0.96, grid=grid))
    summary = recs[-1]
    assert summary.inputs["point"] == "summary"
    assert summary.outputs["local_minima"] == 2
    with pytest.raises(ValueError):
        cmd_scan(ExperimentConfig("scan", fixed=0.96))


def test_ml_critical_row():
    recs = cmd_ml(ExperimentConfig("ml", snr_db_list=(12.0,)))
    assert abs(recs[0].outputs["xi"] - 0.22457) < 1e-3
    crit = recs[-1].outputs
    assert abs(crit["multi_onset_db"] - 10.7105) <= 0.02
    assert abs(crit["discontinuity_db"] - 9.989) <= 0.02


def test_first_iter_command(capsys):
    assert main(["first_iter", "--snr-db", "10", "--r", "0.225173"]) == 0
    rows = read_csv(capsys.readouterr().out)
    assert len(rows) == 1 and rows[0]["escapes"] == "true"
    assert abs(float(rows[0]["e_norm_sq"]) - 0.6749) < 1e-3


def test_json_format():
    recs = [ResultRecord("prediction", {"snr_db": 12.0}, {"perr": 1e-3, "bad": math.nan}, {"seed": 0})]
    doc = json.loads(to_json(recs, "predict"))
    assert doc["schema"] == 1 and doc["command"] == "predict"
    assert doc["records"][0]["outputs"] == {"perr": 1e-3, "bad": None}
    text = to_csv(recs + [ResultRecord("prediction", {"snr_db": 13.0}, {"extra": 1})], "predict")
    rows = read_csv(text)
    assert rows[0]["extra"] == "" and rows[1]["extra"] == "1"


def test_usage_errors_exit_two():
    assert main(["scan", "--grid", "0.1,0.2"]) == 2
    assert main(["predict", "--trials", "0"]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "clup", "predict", "--snr-db", "13", "--format", "json"],
                         capture_output=True, text=True, check=True)
    assert json.loads(out.stdout)["records"][0]["kind"] == "prediction"
