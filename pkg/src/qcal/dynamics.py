"""Ito integration of the Bloch-form stochastic master equation.

State is the Bloch vector X = (x, y, z) inside the unit ball.  The drift is
A0(t) + A2(t) X with

    A0 = [0, 0, -2*gamma(t)]
    A2 = [[-delta-M/2, -omega,      u_y      ],
          [ omega,     -delta-M/2, -u_x      ],
          [-u_y,        u_x,       -2*delta  ]]

and the measurement-backaction diffusion G(X) = -sqrt(M*eta)*[xz, yz, z^2-1].
The weak-measurement record increments are dY = z dt + dW/sqrt(M*eta).

Two frames are supported: "lab" integrates the equations as written with
omega = omega0 and oscillating carrier controls; "rwa" integrates in the
frame co-rotating at the effective drive frequency, with omega replaced by
the detuning and the controls by their co-rotating envelopes.  The
dissipation, measurement and output terms are invariant under rotations
about z, so the two modes differ only by the dropped counter-rotating
drive terms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .env import EnvParams, gamma_t, delta_t
from .pulse import PulseParams, control_at, control_rwa, detuning_rwa


class IntegrationDivergedError(RuntimeError):
    """State became non-finite during SDE integration."""

    def __init__(self, step):
        super().__init__(f"integration diverged at step {step}")
        self.step = step


@dataclass
class SystemMatrices:
    """Time-local coefficients of the Bloch SME.

    ``a2`` and ``a0`` are the state matrix and drift offset at one instant;
    ``g`` evaluates the state-dependent diffusion vector.
    """

    a0: np.ndarray
    a2: np.ndarray
    c: np.ndarray
    m_strength: float
    eta: float

    @property
    def sqrt_meta(self):
        return np.sqrt(self.m_strength * self.eta)

    def g(self, state):
        """Diffusion vector -sqrt(M*eta)*[xz, yz, z^2-1]; broadcasts over
        leading axes of ``state``."""
        state = np.asarray(state, dtype=float)
        z = state[..., 2]
        out = np.empty_like(state)
        out[..., 0] = state[..., 0] * z
        out[..., 1] = state[..., 1] * z
        out[..., 2] = z * z - 1.0
        return -self.sqrt_meta * out


def system_matrices(env: EnvParams, controls, t, omega=None) -> SystemMatrices:
    """Coefficients A0, A2, C (and the G evaluator) at time t.

    ``controls`` is the pair (u_x, u_y); ``omega`` defaults to env.omega0
    and is replaced by the detuning for rotating-frame integration.
    """
    if t < 0:
        raise ValueError("time must be non-negative")
    if omega is None:
        omega = env.omega0
    ux, uy = controls
    gam = gamma_t(env, t)
    dlt = delta_t(env, t)
    m = env.m_strength
    a0 = np.array([0.0, 0.0, -2.0 * gam])
    a2 = np.array([
        [-dlt - m / 2.0, -omega, uy],
        [omega, -dlt - m / 2.0, -ux],
        [-uy, ux, -2.0 * dlt],
    ])
    return SystemMatrices(a0=a0, a2=a2, c=np.array([0.0, 0.0, 1.0]),
                          m_strength=m, eta=env.eta)


def clamp_ball(state):
    """Project onto the unit ball: rescale only when the norm exceeds 1."""
    state = np.asarray(state, dtype=float)
    norm = np.linalg.norm(state, axis=-1, keepdims=True)
    return np.where(norm > 1.0, state / norm, state)


def em_step(state, mats: SystemMatrices, dt, dw):
    """One Euler-Maruyama step; returns (new state, dy).

    dy is the measurement increment z*dt + dw/sqrt(M*eta), or None when
    M = 0 (no measurement record exists).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    state = np.asarray(state, dtype=float)
    drift = mats.a0 + mats.a2 @ state
    new = state + drift * dt + mats.g(state) * dw
    new = clamp_ball(new)
    if mats.m_strength > 0:
        dy = state[2] * dt + dw / mats.sqrt_meta
    else:
        dy = None
    return new, dy


@dataclass
class TrajectoryRecord:
    """One simulated trajectory with its measurement record.

    ``dy`` is None for unmeasured (M=0) runs.  ``dw`` is retained for test
    oracles only.
    """

    times: np.ndarray
    states: np.ndarray
    dy: np.ndarray | None
    dw: np.ndarray
    seed: int | None
    dt: float
    mode: str
    config_hash: str = ""

    @property
    def measured(self):
        return self.dy is not None

    def final_state(self):
        return self.states[-1]

    def to_csv(self, path):
        """Columns t, x, y, z, dy with a provenance header line."""
        n = len(self.times)
        dy = np.concatenate([[np.nan], self.dy]) if self.measured \
            else np.full(n, np.nan)
        data = np.column_stack([self.times, self.states, dy])
        header = (f"seed={self.seed} config_hash={self.config_hash} "
                  f"dt={self.dt!r} mode={self.mode}\nt,x,y,z,dy")
        np.savetxt(path, data, delimiter=",", header=header)

    def to_npz(self, path):
        """Compact binary dump including seed and config hash."""
        np.savez_compressed(
            path, times=self.times, states=self.states,
            dy=self.dy if self.measured else np.array([]),
            dw=self.dw, seed=np.array([-1 if self.seed is None else self.seed]),
            dt=np.array([self.dt]), mode=np.array([self.mode]),
            config_hash=np.array([self.config_hash]))

    @staticmethod
    def from_npz(path):
        d = np.load(path, allow_pickle=False)
        seed = int(d["seed"][0])
        return TrajectoryRecord(
            times=d["times"], states=d["states"],
            dy=d["dy"] if d["dy"].size else None, dw=d["dw"],
            seed=None if seed == -1 else seed, dt=float(d["dt"][0]),
            mode=str(d["mode"][0]), config_hash=str(d["config_hash"][0]))


def trajectory_rng(root_seed, index=0):
    """Counter-based generator for trajectory ``index`` under a root seed."""
    ss = np.random.SeedSequence(root_seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def step_coefficients(env: EnvParams, pulse: PulseParams, times, mode):
    """Per-step (gamma, delta, u_x, u_y, omega) arrays on the given grid."""
    times = np.asarray(times, dtype=float)
    if mode == "lab":
        ux, uy = control_at(pulse, times)
        omega = env.omega0
    elif mode == "rwa":
        ux, uy = control_rwa(pulse, times)
        omega = detuning_rwa(pulse, env.omega0)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    gam = gamma_t(env, times)
    dlt = delta_t(env, times)
    return (np.asarray(gam), np.asarray(dlt), np.asarray(ux),
            np.asarray(uy), omega)


def _stability_check(env, omega, ux, uy, dlt, dt):
    # crude spectral-radius bound for the drift matrix
    rate = np.sqrt(omega**2 + np.max(ux**2 + uy**2)) \
        + np.max(np.abs(dlt)) * 2.0 + env.m_strength
    if dt * rate > 0.1:
        warnings.warn(
            f"dt*|A2| ~ {dt * rate:.3f} > 0.1; Euler-Maruyama may be "
            "inaccurate, reduce dt", RuntimeWarning, stacklevel=3)


def _simulate(env, pulse, x0, dt, t_end, dw, mode, seed, config_hash=""):
    n_steps = int(round(t_end / dt))
    times = np.arange(n_steps + 1) * dt
    gam, dlt, ux, uy, omega = step_coefficients(env, pulse, times[:-1], mode)
    _stability_check(env, omega, ux, uy, dlt, dt)

    m = env.m_strength
    sqrt_meta = np.sqrt(m * env.eta)
    states = np.empty((n_steps + 1, 3))
    states[0] = clamp_ball(np.asarray(x0, dtype=float))
    dy = np.empty(n_steps) if m > 0 else None

    x = states[0].copy()
    for k in range(n_steps):
        a2 = np.array([
            [-dlt[k] - m / 2.0, -omega, uy[k]],
            [omega, -dlt[k] - m / 2.0, -ux[k]],
            [-uy[k], ux[k], -2.0 * dlt[k]],
        ])
        z = x[2]
        g = -sqrt_meta * np.array([x[0] * z, x[1] * z, z * z - 1.0])
        drift = np.array([0.0, 0.0, -2.0 * gam[k]]) + a2 @ x
        if dy is not None:
            dy[k] = z * dt + dw[k] / sqrt_meta
        x = clamp_ball(x + drift * dt + g * dw[k])
        if not np.all(np.isfinite(x)):
            raise IntegrationDivergedError(k)
        states[k + 1] = x

    return TrajectoryRecord(times=times, states=states, dy=dy, dw=dw,
                            seed=seed, dt=dt, mode=mode,
                            config_hash=config_hash)


def simulate_trajectory(env: EnvParams, pulse: PulseParams, x0, dt, t_end,
                        seed, mode="rwa", traj_index=0, config_hash=""):
    """Full stochastic trajectory with measurement record.

    Deterministic given (config, seed, traj_index); Wiener increments come
    from a counter-based generator keyed by the root seed and trajectory
    index, so ensembles can be built concurrently.
    """
    if not t_end >= dt > 0:
        raise ValueError("require t_end >= dt > 0")
    n_steps = int(round(t_end / dt))
    rng = trajectory_rng(seed, traj_index)
    dw = rng.normal(0.0, np.sqrt(dt), size=n_steps)
    return _simulate(env, pulse, x0, dt, t_end, dw, mode, seed, config_hash)


def simulate_pure(env: EnvParams, pulse: PulseParams, x0, dt, t_end,
                  mode="rwa", config_hash=""):
    """Deterministic reference run with M = 0 (no backaction, no noise)."""
    if not t_end >= dt > 0:
        raise ValueError("require t_end >= dt > 0")
    env0 = replace(env, m_strength=0.0)
    n_steps = int(round(t_end / dt))
    return _simulate(env0, pulse, x0, dt, t_end, np.zeros(n_steps), mode,
                     None, config_hash)


def coarse_grained_record(rec: TrajectoryRecord, window):
    """Non-overlapping window averages dY/dt of the measurement record.

    ``window`` must be an integer multiple of the record's dt; returns
    (window centers, dY/dt values).
    """
    if not rec.measured:
        raise ValueError("record carries no measurement (M=0 run)")
    k = window / rec.dt
    if window < rec.dt or abs(k - round(k)) > 1e-9:
        raise ValueError("window must be an integer multiple of dt")
    k = int(round(k))
    n_win = len(rec.dy) // k
    sums = rec.dy[: n_win * k].reshape(n_win, k).sum(axis=1)
    centers = (np.arange(n_win) + 0.5) * window
    return centers, sums / window
