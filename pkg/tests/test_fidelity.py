"""Gate/state fidelity tests."""

import json

import numpy as np
import pytest

from qcal.env import EnvParams, ghz, mhz
from qcal.pulse import pi_pulse
from qcal.estimator import EstimatorUndrivenError
from qcal.fidelity import (PAULI_EIGENSTATES, FidelityReport, GateSpec,
                           error_distribution, gate_fidelity, rotate_about_z,
                           state_overlap, to_drive_frame)


def test_state_overlap_basics():
    up = np.array([0.0, 0.0, 1.0])
    dn = -up
    assert state_overlap(up, up) == pytest.approx(1.0)
    assert state_overlap(up, dn) == pytest.approx(0.0)
    assert state_overlap(up, [1.0, 0.0, 0.0]) == pytest.approx(0.5)
    assert state_overlap(up, np.zeros(3)) == pytest.approx(0.5)


def test_gate_spec_rotation():
    gate = GateSpec(axis=(1.0, 0.0, 0.0), angle=np.pi)
    r = gate.rotation()
    assert np.allclose(r @ [0, 0, 1], [0, 0, -1], atol=1e-12)
    assert np.allclose(r @ [1, 0, 0], [1, 0, 0], atol=1e-12)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    half = GateSpec(axis=(0.0, 1.0, 0.0), angle=np.pi / 2)
    assert np.allclose(half.apply([0, 0, 1]), [1, 0, 0], atol=1e-12)
    with pytest.raises(ValueError):
        GateSpec(axis=(1.0, 1.0, 0.0))


def test_pauli_eigenstates_complete():
    assert set(PAULI_EIGENSTATES) == {"+x", "-x", "+y", "-y", "+z", "-z"}
    for v in PAULI_EIGENSTATES.values():
        assert np.linalg.norm(v) == pytest.approx(1.0)


def test_rotate_about_z():
    v = np.array([1.0, 0.0, 0.5])
    out = rotate_about_z(v, np.pi / 2)
    assert np.allclose(out, [0.0, 1.0, 0.5], atol=1e-12)
    batch = np.stack([v, v])
    assert np.allclose(rotate_about_z(batch, np.pi / 2)[1], out)


def test_to_drive_frame_modes():
    p = pi_pulse()
    v = np.array([1.0, 0.0, 0.0])
    assert np.allclose(to_drive_frame(v, p, 20.0, "rwa"), v)
    lab = to_drive_frame(v, p, 20.0, "lab")
    assert np.allclose(lab, rotate_about_z(v, -p.drive_frequency * 20.0))


def test_identity_gate_on_idle_system():
    """No drive, negligible dissipation: the identity gate scores ~1."""
    env = EnvParams(alpha_c=1e-6, m_strength=0.0)
    from qcal.pulse import PulseParams
    pulse = PulseParams(amp=0.0, t_g=20.0, w_d=ghz(4.88))
    gate = GateSpec(axis=(1.0, 0.0, 0.0), angle=0.0)
    rep = gate_fidelity(env, pulse, gate, state_source="pure")
    assert rep.average == pytest.approx(1.0, abs=1e-6)
    assert set(rep.per_state) == set(PAULI_EIGENSTATES)


def test_pi_gate_pure_fidelity_high_on_resonance():
    env = EnvParams(m_strength=0.0)
    pulse = pi_pulse(w_d=ghz(4.88))
    rep = gate_fidelity(env, pulse, GateSpec(), state_source="pure")
    assert rep.average > 0.99


def test_detuning_lowers_fidelity_phi_restores_it():
    env = EnvParams(omega0=ghz(4.889), m_strength=0.0)
    gate = GateSpec()
    f_plain = gate_fidelity(env, pi_pulse(), gate,
                            state_source="pure").average
    f_tuned = gate_fidelity(env, pi_pulse(phi=mhz(-5.5)), gate,
                            state_source="pure").average
    assert f_tuned > f_plain
    assert f_tuned > 0.99


def test_estimator_source_requires_measurement():
    env = EnvParams(m_strength=0.0)
    pulse = pi_pulse(w_d=ghz(4.88))
    with pytest.raises(EstimatorUndrivenError):
        gate_fidelity(env, pulse, GateSpec(), state_source="pse", n_traj=2)


def test_unknown_source_rejected():
    env = EnvParams()
    pulse = pi_pulse(w_d=ghz(4.88))
    with pytest.raises(ValueError):
        gate_fidelity(env, pulse, GateSpec(), state_source="mixed")
    with pytest.raises(ValueError):
        gate_fidelity(env, pulse, GateSpec(), n_traj=0)


def test_estimator_sources_track_pure():
    env = EnvParams()
    pulse = pi_pulse(w_d=ghz(4.88))
    gate = GateSpec()
    f_pure = gate_fidelity(env, pulse, gate, state_source="pure").average
    f_pse = gate_fidelity(env, pulse, gate, state_source="pse",
                          n_traj=100, seed=1).average
    assert abs(f_pse - f_pure) < 0.01


def test_report_json_round_trip(tmp_path):
    rep = FidelityReport(per_state={"+z": 0.99}, average=0.99, method="pure")
    path = tmp_path / "f.json"
    rep.to_json(path)
    data = json.loads(path.read_text())
    assert data["average"] == 0.99 and data["method"] == "pure"


def test_error_distribution():
    rng = np.random.default_rng(0)
    real = rng.uniform(-1, 1, size=200)
    est = real + rng.normal(0.0, 0.005, size=200)
    d = error_distribution(real, est)
    assert d["counts"].sum() == 200
    assert d["fraction_within_0.02"] > 0.9
    assert d["mean"] < 0.02 and d["max"] >= d["mean"]
    # (n, 3) inputs use the z component
    real3 = np.column_stack([np.zeros(200), np.zeros(200), real])
    est3 = np.column_stack([np.ones(200), np.ones(200), est])
    d3 = error_distribution(real3, est3)
    assert np.allclose(d3["counts"], d["counts"])
    with pytest.raises(ValueError):
        error_distribution(real[:10], est)
