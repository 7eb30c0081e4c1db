"""Configuration loading, validation and provenance hashing."""

import math

import pytest

from qcal.env import ghz, mhz
from qcal.config import ConfigError, config_from_dict, load_config


def test_defaults_from_empty_dict():
    cfg = config_from_dict({})
    assert cfg.env.omega0 == pytest.approx(ghz(4.88))
    assert cfg.env.m_strength == pytest.approx(mhz(2.0))
    assert cfg.pulse.t_g == 20.0 and cfg.pulse.sigma == 5.0
    assert cfg.pulse.w_d == pytest.approx(ghz(4.90))
    assert cfg.bo.n_init == 10 and cfg.bo.budget == 15
    assert cfg.n_traj == 50 and cfg.dt == 0.01 and cfg.mode == "rwa"
    assert cfg.gate.angle == pytest.approx(math.pi)


def test_amplitude_auto_calibrated():
    cfg = config_from_dict({})
    from qcal.pulse import calibrated_amplitude
    assert cfg.pulse.amp == pytest.approx(calibrated_amplitude())
    cfg2 = config_from_dict({"pulse": {"amp": 0.5}})
    assert cfg2.pulse.amp == 0.5


def test_unit_conversions():
    cfg = config_from_dict({
        "environment": {"omega0_ghz": 4.889, "m_mhz": 1.5},
        "pulse": {"phi_mhz": -5.5, "w_d_ghz": 4.885},
    })
    assert cfg.env.omega0 == pytest.approx(ghz(4.889))
    assert cfg.env.m_strength == pytest.approx(mhz(1.5))
    assert cfg.pulse.phi == pytest.approx(mhz(-5.5))
    assert cfg.pulse.w_d == pytest.approx(ghz(4.885))


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dict({"environment": {"alpha": 0.5}})


@pytest.mark.parametrize("data", [
    {"environment": {"eta": 2.0}},
    {"pulse": {"alpha_s": 0.5}},
    {"estimator": {"pse_gain_form": "bogus"}},
    {"bayes": {"transform_mode": "bogus"}},
    {"calibration": {"target_fidelity": 1.5}},
    {"calibration": {"mode": "heisenberg"}},
    {"calibration": {"n_traj": 0}},
    {"calibration": {"gate_axis": [1.0, 1.0, 0.0]}},
])
def test_invalid_values_raise_config_error(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_seed_override():
    cfg = config_from_dict({"calibration": {"seed": 5}}, seed_override=9)
    assert cfg.seed == 9


def test_hash_stable_and_sensitive():
    a = config_from_dict({})
    b = config_from_dict({})
    assert a.config_hash == b.config_hash
    c = config_from_dict({"environment": {"alpha_c": 0.25}})
    assert c.config_hash != a.config_hash
    assert len(a.config_hash) == 12


def test_load_example_conf_matches_defaults():
    from pathlib import Path
    example = Path(__file__).resolve().parents[1] / "example.conf"
    cfg = load_config(example)
    assert cfg.config_hash == config_from_dict({}).config_hash


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.conf")
    bad = tmp_path / "bad.conf"
    bad.write_text("[environment\nalpha_c = ")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(bad)


def test_sweep_detuning_grid():
    cfg = config_from_dict({"sweep": {"detuning_step_mhz": 10.0}})
    assert cfg.sweep.detunings_mhz() == [0.0, -10.0, -20.0, -30.0]
    cfg2 = config_from_dict({})
    d = cfg2.sweep.detunings_mhz()
    assert len(d) == 301 and d[0] == 0.0 and d[-1] == pytest.approx(-30.0)


def test_resolved_dict_round_trips_into_hashable_json():
    import json
    cfg = config_from_dict({"bayes": {"jitter": 1e-10}})
    text = json.dumps(cfg.resolved, sort_keys=True)
    assert "1e-10" in text
    assert json.loads(text) == cfg.resolved
