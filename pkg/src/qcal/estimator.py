"""Real-time optimal state estimation from the weak-measurement record.

Two coupled filters run over a measurement record dY:

* ROSE estimates the conditioned Bloch state X.  Its gain
  K1 = M*P1*C' + sqrt(M)*G(Xhat) is the stationary minimum of the trace of
  the error-covariance rate, and P1 solves the state-dependent differential
  Riccati equation

      dP1/dt = (A2 - sqrt(M) G C) P1 + P1 (.)' - M P1 C'C P1.

* PSE estimates the derivative Xp = dX/dM of the state with respect to the
  measurement strength; the measurement-free (pure) state is reconstructed
  to first order as X0 = Xhat - M*Xp.

Both filters are integrated with explicit Euler on the simulation grid,
with covariance symmetrization each step and eigenvalue clipping whenever a
covariance loses positive semidefiniteness beyond tolerance (logged).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .env import EnvParams
from .dynamics import (SystemMatrices, TrajectoryRecord, clamp_ball,
                       step_coefficients, trajectory_rng,
                       IntegrationDivergedError)

log = logging.getLogger(__name__)

#: analytic derivative of the A2 diagonal with respect to M
DA2_DM_DIAG = np.array([-0.5, -0.5, 0.0])

PSE_GAIN_FORMS = ("sqrt_m", "m")


class EstimatorUndrivenError(ValueError):
    """Raised when there is no measurement record to assimilate (M = 0)."""


class SequencingError(RuntimeError):
    """PSE stepped before ROSE for the same measurement increment."""


@dataclass
class RoseState:
    """ROSE filter state: estimate, covariance and per-step caches."""

    x_hat: np.ndarray
    p1: np.ndarray
    k1: np.ndarray | None = None
    innovation: float | None = None
    x_prev: np.ndarray | None = None
    p1_prev: np.ndarray | None = None


@dataclass
class PseState:
    """PSE filter state; ``x0`` is the reconstructed pure-state estimate."""

    x_p: np.ndarray
    p2: np.ndarray
    x0: np.ndarray | None = None


def initial_rose(x0, p_init=0.01):
    return RoseState(x_hat=np.asarray(x0, dtype=float).copy(),
                     p1=p_init * np.eye(3))


def initial_pse(p_init=0.01):
    return PseState(x_p=np.zeros(3), p2=p_init * np.eye(3))


def rose_gain(x_hat, p1, env: EnvParams):
    """Optimal ROSE gain K1 = M*P1*C' + sqrt(M)*G(Xhat)."""
    m = env.m_strength
    if m <= 0:
        raise EstimatorUndrivenError("estimator requires m_strength > 0")
    sqrt_meta = np.sqrt(m * env.eta)
    x = np.asarray(x_hat, dtype=float)
    g = -sqrt_meta * np.array([x[0] * x[2], x[1] * x[2], x[2] ** 2 - 1.0])
    return m * np.asarray(p1)[:, 2] + np.sqrt(m) * g


def trace_p1_dot(k1, x_hat, p1, a2, env: EnvParams):
    """tr dP1/dt as an explicit function of the gain (optimality oracle)."""
    m = env.m_strength
    sqrt_meta = np.sqrt(m * env.eta)
    x = np.asarray(x_hat, dtype=float)
    g = -sqrt_meta * np.array([x[0] * x[2], x[1] * x[2], x[2] ** 2 - 1.0])
    c = np.array([0.0, 0.0, 1.0])
    f = a2 - np.outer(k1, c)
    resid = g - np.asarray(k1) / np.sqrt(m)
    pdot = f @ p1 + p1 @ f.T + np.outer(resid, resid)
    return np.trace(pdot)


def _psd_repair(p, tol=1e-9, label="P"):
    """Clip negative eigenvalues to zero when PSD is lost beyond tol."""
    w, v = np.linalg.eigh(p)
    if w.min() >= -tol:
        return p, False
    log.debug("covariance repair: %s min eigenvalue %.3e clipped", label,
              w.min())
    w = np.clip(w, 0.0, None)
    return (v * w) @ v.T, True


def rose_step(rs: RoseState, mats: SystemMatrices, dy, dt):
    """Assimilate one measurement increment; returns the updated RoseState.

    The innovation and pre-update values are cached on the returned state
    so that the coupled PSE step can be run for the same increment.
    """
    m = mats.m_strength
    if m <= 0:
        raise EstimatorUndrivenError("estimator requires m_strength > 0")
    sqrt_m = np.sqrt(m)
    x, p1 = rs.x_hat, rs.p1
    c = mats.c
    g = mats.g(x)
    k1 = m * p1[:, 2] + sqrt_m * g
    innov = dy - x[2] * dt
    x_new = x + (mats.a0 + mats.a2 @ x) * dt + k1 * innov
    f = mats.a2 - sqrt_m * np.outer(g, c)
    p1_col = p1[:, 2]
    p1_new = p1 + dt * (f @ p1 + p1 @ f.T - m * np.outer(p1_col, p1_col))
    p1_new = 0.5 * (p1_new + p1_new.T)
    p1_new, _ = _psd_repair(p1_new, label="P1")
    return RoseState(x_hat=x_new, p1=p1_new, k1=k1, innovation=innov,
                     x_prev=x, p1_prev=p1)


def pse_step(ps: PseState, rs: RoseState, mats: SystemMatrices, dy, dt,
             env: EnvParams, gain_form="sqrt_m"):
    """Coupled PSE step; requires rose_step already applied for this dy.

    ``gain_form`` selects the leading factor of the covariance term in K2:
    "sqrt_m" follows the stated gain sqrt(M)*P2*C'; "m" uses M*P2*C' by
    analogy with the ROSE gain.
    """
    if rs.innovation is None or rs.x_prev is None:
        raise SequencingError("pse_step requires rose_step for this step first")
    if gain_form not in PSE_GAIN_FORMS:
        raise ValueError(f"gain_form must be one of {PSE_GAIN_FORMS}")
    m = env.m_strength
    sqrt_m = np.sqrt(m)
    xh, p1 = rs.x_prev, rs.p1_prev
    xp, p2 = ps.x_p, ps.p2
    dg_dm = mats.g(xh) / (2.0 * m)
    lead = sqrt_m if gain_form == "sqrt_m" else m
    k2 = lead * p2[:, 2] + sqrt_m * dg_dm
    xp_new = xp + (DA2_DM_DIAG * xh) * dt + (mats.a2 @ xp) * dt \
        + k2 * rs.innovation
    f2 = mats.a2 - sqrt_m * np.outer(dg_dm, mats.c)
    p2_col = p2[:, 2]
    cross = DA2_DM_DIAG[:, None] * p1 + p1 * DA2_DM_DIAG[None, :]
    p2_new = p2 + dt * (f2 @ p2 + p2 @ f2.T - m * np.outer(p2_col, p2_col)
                        + cross)
    p2_new = 0.5 * (p2_new + p2_new.T)
    p2_new, _ = _psd_repair(p2_new, label="P2")
    x0 = rs.x_hat - m * xp_new
    return PseState(x_p=xp_new, p2=p2_new, x0=x0)


@dataclass
class EstimatorHistory:
    """Per-step estimator output over one trajectory."""

    times: np.ndarray
    x_hat: np.ndarray
    p1: np.ndarray
    x_p: np.ndarray
    p2: np.ndarray
    x0: np.ndarray

    def to_csv(self, path, header_extra=""):
        cols = np.column_stack([
            self.times, self.x_hat, self.x0,
            np.trace(self.p1, axis1=1, axis2=2),
            np.trace(self.p2, axis1=1, axis2=2),
        ])
        header = (header_extra + "t,x_hat,y_hat,z_hat,x0,y0,z0,tr_p1,tr_p2")
        np.savetxt(path, cols, delimiter=",", header=header)


def run_estimators(rec: TrajectoryRecord, env: EnvParams, pulse, x_hat0=None,
                   p1_0=None, p2_0=None, pse_gain_form="sqrt_m"):
    """Full coupled ROSE+PSE pass over one measurement record.

    ``env`` is the estimator's model of the environment; it may differ from
    the environment that generated the record (parameter-mismatch sweeps).
    Returns (EstimatorHistory, EstimatorHistory-like) as a single history
    holding both filters.
    """
    if not rec.measured:
        raise EstimatorUndrivenError("record carries no measurement (M=0)")
    n = len(rec.dy)
    times = rec.times
    gam, dlt, ux, uy, omega = step_coefficients(env, pulse, times[:-1],
                                                rec.mode)
    x_hat0 = rec.states[0] if x_hat0 is None else np.asarray(x_hat0, float)
    rs = RoseState(x_hat=x_hat0.copy(),
                   p1=np.eye(3) * 0.01 if p1_0 is None else np.array(p1_0))
    ps = PseState(x_p=np.zeros(3),
                  p2=np.eye(3) * 0.01 if p2_0 is None else np.array(p2_0))

    hist = EstimatorHistory(
        times=times,
        x_hat=np.empty((n + 1, 3)), p1=np.empty((n + 1, 3, 3)),
        x_p=np.empty((n + 1, 3)), p2=np.empty((n + 1, 3, 3)),
        x0=np.empty((n + 1, 3)))
    hist.x_hat[0], hist.p1[0] = rs.x_hat, rs.p1
    hist.x_p[0], hist.p2[0] = ps.x_p, ps.p2
    hist.x0[0] = rs.x_hat - env.m_strength * ps.x_p

    m = env.m_strength
    for k in range(n):
        mats = _mats_at(env, gam[k], dlt[k], ux[k], uy[k], omega, m)
        try:
            rs = rose_step(rs, mats, rec.dy[k], rec.dt)
            ps = pse_step(ps, rs, mats, rec.dy[k], rec.dt, env,
                          gain_form=pse_gain_form)
        except FloatingPointError as exc:  # pragma: no cover
            raise IntegrationDivergedError(k) from exc
        hist.x_hat[k + 1], hist.p1[k + 1] = rs.x_hat, rs.p1
        hist.x_p[k + 1], hist.p2[k + 1] = ps.x_p, ps.p2
        hist.x0[k + 1] = ps.x0
    return hist


def _mats_at(env, gam, dlt, ux, uy, omega, m):
    a2 = np.array([
        [-dlt - m / 2.0, -omega, uy],
        [omega, -dlt - m / 2.0, -ux],
        [-uy, ux, -2.0 * dlt],
    ])
    return SystemMatrices(a0=np.array([0.0, 0.0, -2.0 * gam]), a2=a2,
                          c=np.array([0.0, 0.0, 1.0]), m_strength=m,
                          eta=env.eta)


# ---------------------------------------------------------------------------
# Vectorized ensemble engine: simulate + filter n_traj trajectories at once.
# ---------------------------------------------------------------------------

@dataclass
class EnsembleResult:
    """Final states (and optional mean curves) of a coupled ensemble run."""

    x_final: np.ndarray       # (n_traj, 3) simulated finals
    xhat_final: np.ndarray    # (n_traj, 3) ROSE finals
    x0_final: np.ndarray      # (n_traj, 3) PSE-reconstructed finals
    seed: int
    psd_repairs: int = 0
    times: np.ndarray | None = None
    mean_true: np.ndarray | None = None
    mean_xhat: np.ndarray | None = None
    mean_x0: np.ndarray | None = None
    dy: np.ndarray | None = None  # (n_steps, n_traj) when requested


def _minor_floor(p):
    """Lower bound proxy for PSD: most negative principal minor of a batch
    of symmetric 3x3 matrices."""
    d = np.stack([p[:, 0, 0], p[:, 1, 1], p[:, 2, 2]], axis=1)
    m01 = p[:, 0, 0] * p[:, 1, 1] - p[:, 0, 1] ** 2
    m02 = p[:, 0, 0] * p[:, 2, 2] - p[:, 0, 2] ** 2
    m12 = p[:, 1, 1] * p[:, 2, 2] - p[:, 1, 2] ** 2
    det = np.linalg.det(p)
    return np.minimum(d.min(axis=1),
                      np.minimum(np.minimum(m01, m02), np.minimum(m12, det)))


def _batch_repair(p, bad):
    w, v = np.linalg.eigh(p[bad])
    w = np.clip(w, 0.0, None)
    p[bad] = np.einsum("nij,nj,nkj->nik", v, w, v)
    return p


def run_filter_ensemble(true_env: EnvParams, pulse, x0, dt, t_end, n_traj,
                        seed, mode="rwa", model_env=None,
                        pse_gain_form="sqrt_m", p_init=0.01,
                        store_curves=False, store_dy=False):
    """Simulate n_traj measured trajectories and run ROSE+PSE on each.

    The physical system evolves under ``true_env``; the filters use
    ``model_env`` (defaults to the true one) so parameter-mismatch sweeps
    can detune the estimator's model.  Trajectory k uses the counter-based
    stream (seed, k), identical to ``simulate_trajectory(..., traj_index=k)``.
    """
    if true_env.m_strength <= 0:
        raise EstimatorUndrivenError("ensemble filtering requires M > 0")
    if pse_gain_form not in PSE_GAIN_FORMS:
        raise ValueError(f"gain_form must be one of {PSE_GAIN_FORMS}")
    model_env = true_env if model_env is None else model_env

    n_steps = int(round(t_end / dt))
    times = np.arange(n_steps + 1) * dt
    g_t, d_t, ux_t, uy_t, om_t = step_coefficients(true_env, pulse,
                                                   times[:-1], mode)
    g_m, d_m, ux_m, uy_m, om_m = step_coefficients(model_env, pulse,
                                                   times[:-1], mode)

    m = true_env.m_strength
    sqrt_m = np.sqrt(m)
    sqrt_meta = np.sqrt(m * true_env.eta)
    lead = sqrt_m if pse_gain_form == "sqrt_m" else m

    dw = np.empty((n_steps, n_traj))
    for j in range(n_traj):
        dw[:, j] = trajectory_rng(seed, j).normal(0.0, np.sqrt(dt),
                                                  size=n_steps)

    x = np.tile(clamp_ball(np.asarray(x0, dtype=float)), (n_traj, 1))
    xh = x.copy()
    xp = np.zeros((n_traj, 3))
    p1 = np.tile(p_init * np.eye(3), (n_traj, 1, 1))
    p2 = p1.copy()

    repairs = 0
    if store_curves:
        mean_true = np.empty((n_steps + 1, 3))
        mean_xhat = np.empty((n_steps + 1, 3))
        mean_x0 = np.empty((n_steps + 1, 3))
        mean_true[0] = x.mean(axis=0)
        mean_xhat[0] = xh.mean(axis=0)
        mean_x0[0] = xh.mean(axis=0)
    dy_store = np.empty((n_steps, n_traj)) if store_dy else None

    eye3 = np.eye(3)
    for k in range(n_steps):
        a2_t = np.array([
            [-d_t[k] - m / 2.0, -om_t, uy_t[k]],
            [om_t, -d_t[k] - m / 2.0, -ux_t[k]],
            [-uy_t[k], ux_t[k], -2.0 * d_t[k]],
        ])
        a2_m = np.array([
            [-d_m[k] - m / 2.0, -om_m, uy_m[k]],
            [om_m, -d_m[k] - m / 2.0, -ux_m[k]],
            [-uy_m[k], ux_m[k], -2.0 * d_m[k]],
        ])
        dwk = dw[k]

        # physical step (Euler-Maruyama)
        z = x[:, 2]
        g = np.empty_like(x)
        g[:, 0] = x[:, 0] * z
        g[:, 1] = x[:, 1] * z
        g[:, 2] = z * z - 1.0
        g *= -sqrt_meta
        dy = z * dt + dwk / sqrt_meta
        drift = x @ a2_t.T
        drift[:, 2] -= 2.0 * g_t[k]
        x = clamp_ball(x + drift * dt + g * dwk[:, None])
        if store_dy:
            dy_store[k] = dy

        # ROSE
        innov = dy - xh[:, 2] * dt
        zh = xh[:, 2]
        gh = np.empty_like(xh)
        gh[:, 0] = xh[:, 0] * zh
        gh[:, 1] = xh[:, 1] * zh
        gh[:, 2] = zh * zh - 1.0
        gh *= -sqrt_meta
        k1 = m * p1[:, :, 2] + sqrt_m * gh
        drift_h = xh @ a2_m.T
        drift_h[:, 2] -= 2.0 * g_m[k]
        xh_new = xh + drift_h * dt + k1 * innov[:, None]

        f1 = np.broadcast_to(a2_m, (n_traj, 3, 3)).copy()
        f1[:, :, 2] -= sqrt_m * gh
        p1c = p1[:, :, 2]
        p1_new = p1 + dt * (f1 @ p1 + p1 @ f1.transpose(0, 2, 1)
                            - m * p1c[:, :, None] * p1c[:, None, :])
        p1_new = 0.5 * (p1_new + p1_new.transpose(0, 2, 1))

        # PSE (uses pre-update ROSE quantities; coupled via P1 cross term)
        dg_dm = gh / (2.0 * m)
        k2 = lead * p2[:, :, 2] + sqrt_m * dg_dm
        xp = xp + (DA2_DM_DIAG[None, :] * xh) * dt + (xp @ a2_m.T) * dt \
            + k2 * innov[:, None]
        f2 = np.broadcast_to(a2_m, (n_traj, 3, 3)).copy()
        f2[:, :, 2] -= sqrt_m * dg_dm
        p2c = p2[:, :, 2]
        cross = DA2_DM_DIAG[None, :, None] * p1 \
            + p1 * DA2_DM_DIAG[None, None, :]
        p2 = p2 + dt * (f2 @ p2 + p2 @ f2.transpose(0, 2, 1)
                        - m * p2c[:, :, None] * p2c[:, None, :] + cross)
        p2 = 0.5 * (p2 + p2.transpose(0, 2, 1))

        xh = xh_new
        p1 = p1_new

        bad1 = _minor_floor(p1) < -1e-12
        if bad1.any():
            repairs += int(bad1.sum())
            log.debug("covariance repair: P1 lost PSD on %d trajectories "
                      "at step %d", int(bad1.sum()), k)
            p1 = _batch_repair(p1, bad1)
        bad2 = _minor_floor(p2) < -1e-12
        if bad2.any():
            repairs += int(bad2.sum())
            log.debug("covariance repair: P2 lost PSD on %d trajectories "
                      "at step %d", int(bad2.sum()), k)
            p2 = _batch_repair(p2, bad2)

        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(xh)):
            raise IntegrationDivergedError(k)

        if store_curves:
            mean_true[k + 1] = x.mean(axis=0)
            mean_xhat[k + 1] = xh.mean(axis=0)
            mean_x0[k + 1] = (xh - m * xp).mean(axis=0)

    if repairs:
        log.info("covariance repairs over the ensemble run: %d "
                 "(eigenvalue clips)", repairs)
    return EnsembleResult(
        x_final=x, xhat_final=xh, x0_final=xh - m * xp, seed=seed,
        psd_repairs=repairs, times=times,
        mean_true=mean_true if store_curves else None,
        mean_xhat=mean_xhat if store_curves else None,
        mean_x0=mean_x0 if store_curves else None,
        dy=dy_store)
