"""Calibration orchestration tests: loop, counters, sweeps, accounting."""

import json

import numpy as np
import pytest

from qcal.config import config_from_dict
from qcal.calib import (baseline_accounting, run_calibration,
                        sweep_energy_mismatch, sweep_environment,
                        write_table1)


def _small_cfg(**cal):
    base = {"n_traj": 10, "seed": 3}
    base.update(cal)
    return config_from_dict({
        "environment": {"omega0_ghz": 4.889},
        "calibration": base,
        "bayes": {"n_init": 2, "budget": 1},
        "sweep": {"n_traj": 10, "detuning_step_mhz": 15.0, "r_points": 3},
    })


def test_budget_zero_single_evaluation():
    cfg = config_from_dict({
        "calibration": {"n_traj": 5, "seed": 0},
        "bayes": {"n_init": 1, "budget": 0},
    })
    art = run_calibration(cfg)
    # one BO observation plus the final winner re-evaluation
    assert len(art.trace.records) == 1
    assert art.counters["evaluations"] == 2
    assert art.counters["records"] == 2 * 6 * 5


def test_counters_and_artifact(tmp_path):
    cfg = _small_cfg()
    art = run_calibration(cfg)
    n_obs = len([r for r in art.trace.records if r["f"] is not None])
    assert art.counters["evaluations"] == n_obs + 1
    assert art.counters["records"] == 6 * cfg.n_traj * (n_obs + 1)
    assert art.counters["wall_time_s"] > 0
    assert 0.0 < art.report.average <= 1.0
    assert art.config_hash == cfg.config_hash

    art.persist(tmp_path)
    assert (tmp_path / "trace.jsonl").exists()
    fid = json.loads((tmp_path / "fidelity.json").read_text())
    assert fid["config_hash"] == cfg.config_hash
    assert "wall_time_s" not in fid["counters"]
    resolved = json.loads((tmp_path / "config_resolved.json").read_text())
    assert resolved["environment"]["alpha_c"] == 0.5
    first = (tmp_path / "trace.jsonl").read_text().splitlines()[0]
    assert first.startswith("#") and cfg.config_hash in first


def test_calibration_never_regresses_on_best():
    cfg = _small_cfg()
    art = run_calibration(cfg)
    fs = [r["f"] for r in art.trace.records if r["f"] is not None]
    n_init = min(cfg.bo.n_init, len(fs))
    assert art.trace.best["f"] >= max(fs[:n_init])


def test_calibration_deterministic():
    a = run_calibration(_small_cfg())
    b = run_calibration(_small_cfg())
    assert a.trace.records == b.trace.records
    assert a.report.average == b.report.average


def test_sweep_energy_mismatch_shape_and_matched_point():
    cfg = _small_cfg()
    curves = sweep_energy_mismatch(cfg, detunings_mhz=[0.0, -15.0])
    assert set(curves) == {"4.9GHz", "4.885GHz"}
    for rows in curves.values():
        assert rows.shape == (2, 4)
        det0 = rows[rows[:, 0] == 0.0][0]
        assert det0[3] < 0.01  # matched model: error within MC noise
        det15 = rows[rows[:, 0] == -15.0][0]
        assert det15[3] > det0[3]


def test_sweep_energy_rejects_out_of_range():
    cfg = _small_cfg()
    with pytest.raises(ValueError):
        sweep_energy_mismatch(cfg, detunings_mhz=[-40.0])
    with pytest.raises(ValueError):
        sweep_energy_mismatch(cfg, detunings_mhz=[5.0])


def test_sweep_environment_shape_and_matched_point():
    cfg = _small_cfg()
    r0 = cfg.env.r
    rows = sweep_environment(cfg, r_values=[r0 / 2.0, r0])
    assert rows.shape == (2, 4)
    matched = rows[rows[:, 0] == r0][0]
    assert matched[3] < 0.01
    with pytest.raises(ValueError):
        sweep_environment(cfg, r_values=[r0 * 2.0])


def test_sweep_workers_match_sequential():
    cfg = _small_cfg()
    seq = sweep_environment(cfg, r_values=[0.005, 0.01], workers=0)
    par = sweep_environment(cfg, r_values=[0.005, 0.01], workers=2)
    assert np.array_equal(seq, par)


def test_baseline_accounting_orders(tmp_path):
    cfg = config_from_dict({})
    rows = baseline_accounting(cfg)
    by = {r["method"]: r for r in rows}
    assert by["proposed"]["order"] == "1e2"
    assert by["grid_baseline"]["order"] == "1e5"
    assert by["grid_baseline"]["data_number"] >= 1e5
    assert 100 <= by["proposed"]["data_number"] < 1000
    assert by["proposed"]["test_time_us"] < by["grid_baseline"]["test_time_us"]
    assert by["grid_baseline"]["trying"] == "search all"

    path = tmp_path / "table1.csv"
    write_table1(rows, path, header="hdr")
    lines = path.read_text().splitlines()
    assert lines[0] == "# hdr"
    assert lines[1] == "method,data_number,order,trying,test_time_us"
    assert len(lines) == 4


def test_accounting_uses_artifact_counters():
    cfg = config_from_dict({
        "calibration": {"n_traj": 5},
        "bayes": {"n_init": 1, "budget": 0},
    })
    art = run_calibration(cfg)
    rows = baseline_accounting(cfg, art)
    by = {r["method"]: r for r in rows}
    assert by["proposed"]["data_number"] == 6 * art.counters["evaluations"]
