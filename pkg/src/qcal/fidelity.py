"""State and gate fidelity.

For Bloch vectors a, b the state overlap is Tr[rho_a rho_b] = (1 + a.b)/2.
The gate fidelity is the six-Pauli-eigenstate average of the overlap
between the ideal image of each eigenstate and the final state produced by
the channel (pure simulation, ROSE estimate, or PSE-reconstructed state
averaged over trajectories).

Final states are compared in the frame co-rotating at the effective drive
frequency; "rwa" simulations already live there, lab-frame finals are
rotated into it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .env import EnvParams
from .pulse import PulseParams
from .dynamics import simulate_pure
from .estimator import run_filter_ensemble, EstimatorUndrivenError

PAULI_EIGENSTATES = {
    "+x": np.array([1.0, 0.0, 0.0]), "-x": np.array([-1.0, 0.0, 0.0]),
    "+y": np.array([0.0, 1.0, 0.0]), "-y": np.array([0.0, -1.0, 0.0]),
    "+z": np.array([0.0, 0.0, 1.0]), "-z": np.array([0.0, 0.0, -1.0]),
}

STATE_SOURCES = ("pure", "rose", "pse")


@dataclass(frozen=True)
class GateSpec:
    """Ideal gate as a Bloch rotation: axis (unit 3-vector) and angle (rad)."""

    axis: tuple = (1.0, 0.0, 0.0)
    angle: float = np.pi

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        norm = np.linalg.norm(axis)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError("gate axis must be normalized")

    def rotation(self):
        """Rodrigues rotation matrix for the ideal gate."""
        k = np.asarray(self.axis, dtype=float)
        kx = np.array([[0.0, -k[2], k[1]],
                       [k[2], 0.0, -k[0]],
                       [-k[1], k[0], 0.0]])
        return (np.eye(3) + np.sin(self.angle) * kx
                + (1.0 - np.cos(self.angle)) * (kx @ kx))

    def apply(self, state):
        return self.rotation() @ np.asarray(state, dtype=float)


@dataclass
class FidelityReport:
    """Six-eigenstate fidelity terms and their average."""

    per_state: dict
    average: float
    method: str

    def to_json(self, path=None):
        payload = {"method": self.method, "average": self.average,
                   "per_state": self.per_state}
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def state_overlap(a, b):
    """Tr[rho_a rho_b] = (1 + a.b)/2 for Bloch vectors inside the unit ball."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.5 * (1.0 + float(a @ b))


def rotate_about_z(state, angle):
    c, s = np.cos(angle), np.sin(angle)
    rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return np.asarray(state, dtype=float) @ rz.T


def to_drive_frame(state, pulse: PulseParams, t, mode):
    """Map a simulated state into the frame rotating at the drive frequency."""
    if mode == "rwa":
        return np.asarray(state, dtype=float)
    return rotate_about_z(state, -pulse.drive_frequency * t)


def channel_final(env: EnvParams, pulse: PulseParams, x0, state_source,
                  n_traj, dt, mode, seed, model_env=None,
                  pse_gain_form="sqrt_m"):
    """Final Bloch vector of the (possibly estimated) channel, drive frame."""
    if state_source == "pure":
        rec = simulate_pure(env, pulse, x0, dt, pulse.t_g, mode=mode)
        return to_drive_frame(rec.final_state(), pulse, pulse.t_g, mode)
    if state_source not in STATE_SOURCES:
        raise ValueError(f"state_source must be one of {STATE_SOURCES}")
    if env.m_strength <= 0:
        raise EstimatorUndrivenError(
            "estimator-sourced fidelity requires M > 0")
    res = run_filter_ensemble(env, pulse, x0, dt, pulse.t_g, n_traj, seed,
                              mode=mode, model_env=model_env,
                              pse_gain_form=pse_gain_form)
    finals = res.xhat_final if state_source == "rose" else res.x0_final
    mean = finals.mean(axis=0)
    return to_drive_frame(mean, pulse, pulse.t_g, mode)


def gate_fidelity(env: EnvParams, pulse: PulseParams, gate: GateSpec,
                  state_source="pure", n_traj=1, dt=0.01, mode="rwa",
                  seed=0, model_env=None, pse_gain_form="sqrt_m"):
    """Six-Pauli-eigenstate average gate fidelity.

    With ``state_source="pure"`` the channel is the deterministic M=0 run;
    "rose" / "pse" average the estimated finals over ``n_traj`` measured
    trajectories per eigenstate before taking the overlap.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    rot = gate.rotation()
    per_state = {}
    for i, (name, x0) in enumerate(PAULI_EIGENSTATES.items()):
        final = channel_final(env, pulse, x0, state_source, n_traj, dt, mode,
                              seed + i, model_env=model_env,
                              pse_gain_form=pse_gain_form)
        per_state[name] = state_overlap(rot @ x0, final)
    avg = float(np.mean(list(per_state.values())))
    return FidelityReport(per_state=per_state, average=avg,
                          method=state_source)


def error_distribution(real_finals, estimated_finals, bins=20):
    """Per-trajectory |z - z_hat| histogram and summary statistics."""
    real = np.asarray(real_finals, dtype=float)
    est = np.asarray(estimated_finals, dtype=float)
    if real.shape != est.shape:
        raise ValueError("paired lists must have equal length")
    if real.ndim == 2:
        real, est = real[:, 2], est[:, 2]
    err = np.abs(real - est)
    counts, edges = np.histogram(err, bins=bins)
    return {
        "counts": counts,
        "bin_edges": edges,
        "mean": float(err.mean()),
        "max": float(err.max()),
        "fraction_within_0.02": float(np.mean(err <= 0.02)),
    }
