"""Gaussian-process Bayesian optimization over the two pulse parameters.

The objective (gate fidelity in (0,1)) is mapped through the inverse
Gaussian CDF ("probit") so an unbounded-range GP can model it; a Matern-5/2
kernel on domain-normalized coordinates is fitted by maximizing the log
marginal likelihood over a deterministic grid-plus-refine search.  The next
query point maximizes the upper-confidence acquisition

    ac(theta) = beta * cov(theta) + mean(theta)

over a segmented grid with two refinement levels; beta decays geometrically
over the iteration budget.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import ndtr, ndtri


class IllConditionedKernelError(np.linalg.LinAlgError):
    """Kernel matrix is not positive definite; try a larger jitter."""


SQRT5 = math.sqrt(5.0)
_F_CLIP = 1e-6


def kernel(theta_a, theta_b, hyper, widths=None):
    """Matern-5/2 covariance between parameter points.

    ``hyper`` is the pair (V, I) = (signal variance, length scale);
    distances are per-dimension normalized by ``widths`` when given.
    """
    v, length = hyper
    a = np.asarray(theta_a, dtype=float)
    b = np.asarray(theta_b, dtype=float)
    if widths is not None:
        a = a / np.asarray(widths, dtype=float)
        b = b / np.asarray(widths, dtype=float)
    d = np.linalg.norm(np.atleast_1d(a - b), axis=-1)
    return matern52(d, v, length)


def matern52(d, v, length):
    s = SQRT5 * d / length
    return v * (1.0 + s + s * s / 3.0) * np.exp(-s)


@dataclass
class AcquisitionConfig:
    """Schedule and search settings for the suggest/observe loop.

    ``decay=None`` selects the geometric ratio that brings beta down to
    5% of beta0 by the end of the budget.
    """

    beta0: float = 2.0
    decay: float | None = None
    segments: int = 10
    budget: int = 15
    n_init: int = 10
    use_std: bool = False

    def __post_init__(self):
        if self.beta0 <= 0:
            raise ValueError("beta0 must be positive")
        if self.decay is not None and not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        if self.segments < 2:
            raise ValueError("segments must be >= 2")

    def beta_at(self, k):
        decay = self.decay
        if decay is None:
            decay = 0.05 ** (1.0 / max(self.budget, 1))
        return self.beta0 * decay**k


@dataclass
class GpModel:
    """Observations, hyperparameters and posterior machinery.

    Hyper ``(V, I)`` live on coordinates normalized to [0,1]^2 by the
    search-domain bounds, so a single isotropic length scale suffices.
    """

    domain: tuple
    hyper: tuple = (1.0, 0.3)
    transform_mode: str = "probit"
    jitter: float = 1e-8
    thetas: list = field(default_factory=list)
    fs: list = field(default_factory=list)

    def __post_init__(self):
        if self.transform_mode not in ("probit", "direct"):
            raise ValueError("transform_mode must be 'probit' or 'direct'")
        self._lo = np.array([b[0] for b in self.domain], dtype=float)
        self._hi = np.array([b[1] for b in self.domain], dtype=float)
        if np.any(self._hi <= self._lo):
            raise ValueError("domain bounds must satisfy hi > lo")

    @property
    def n_obs(self):
        return len(self.fs)

    def add(self, theta, f):
        self.thetas.append(np.asarray(theta, dtype=float).copy())
        self.fs.append(float(f))

    def normalized(self, thetas=None):
        t = np.asarray(self.thetas if thetas is None else thetas, dtype=float)
        return (t - self._lo) / (self._hi - self._lo)

    def targets(self):
        """Observation vector in latent space (probit-transformed)."""
        f = np.asarray(self.fs, dtype=float)
        if self.transform_mode == "probit":
            return ndtri(np.clip(f, _F_CLIP, 1.0 - _F_CLIP))
        return f

    def centered_targets(self):
        """Latent targets minus their mean; the GP models residuals around
        the empirical mean, so constant data carries zero signal."""
        d = self.targets()
        mean = d.mean() if len(d) else 0.0
        return d - mean, mean

    def from_latent(self, g):
        return ndtr(g) if self.transform_mode == "probit" else g

    def kernel_matrix(self, hyper=None):
        hyper = self.hyper if hyper is None else hyper
        x = self.normalized()
        d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
        return matern52(d, *hyper) + self.jitter * np.eye(len(x))

    def _factor(self, hyper=None):
        k = self.kernel_matrix(hyper)
        try:
            return cho_factor(k, lower=True)
        except np.linalg.LinAlgError as exc:
            raise IllConditionedKernelError(
                "kernel matrix not positive definite; increase jitter"
            ) from exc


def log_marginal_likelihood(model: GpModel, hyper=None):
    """-(1/2) D'K^-1 D - (1/2) log|K| - (n/2) log 2pi."""
    if model.n_obs < 2:
        raise ValueError("need at least 2 observations")
    d, _ = model.centered_targets()
    factor = model._factor(hyper)
    alpha = cho_solve(factor, d)
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    n = len(d)
    return float(-0.5 * d @ alpha - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi))


def fit_hyperparameters(model: GpModel):
    """Deterministic grid-plus-refine maximization of the log marginal
    likelihood over (V, I); sets and returns the fitted pair."""
    if model.n_obs < 2:
        raise ValueError("need at least 2 observations to fit")
    d, _ = model.centered_targets()
    scale = max(float(np.var(d)), 1e-4)

    def score(v, length):
        try:
            return log_marginal_likelihood(model, (v, length))
        except IllConditionedKernelError:
            return -np.inf

    v_grid = np.geomspace(1e-10 * scale, 1e2 * scale, 25)
    l_grid = np.geomspace(0.02, 3.0, 17)
    best = (-np.inf, None)
    for v in v_grid:
        for length in l_grid:
            s = score(v, length)
            if s > best[0]:
                best = (s, (v, length))
    if best[1] is None:
        raise IllConditionedKernelError("all hyperparameter candidates failed")

    for _ in range(2):  # refine around the incumbent with a finer grid
        v0, l0 = best[1]
        for v in np.geomspace(v0 / 3.0, v0 * 3.0, 9):
            for length in np.geomspace(l0 / 2.0, l0 * 2.0, 9):
                s = score(v, length)
                if s > best[0]:
                    best = (s, (v, length))
    model.hyper = best[1]
    return best[1]


def _posterior_latent(model: GpModel, thetas):
    """Latent-space posterior mean and variance at query points (batched)."""
    q = np.atleast_2d(np.asarray(thetas, dtype=float))
    xq = model.normalized(q)
    v, length = model.hyper
    if model.n_obs == 0:
        return np.zeros(len(q)), np.full(len(q), v)
    x = model.normalized()
    d_cross = np.linalg.norm(xq[:, None, :] - x[None, :, :], axis=-1)
    k_cross = matern52(d_cross, v, length)
    factor = model._factor()
    d, d_mean = model.centered_targets()
    alpha = cho_solve(factor, d)
    mean = k_cross @ alpha + d_mean
    kinv_kt = cho_solve(factor, k_cross.T)
    var = v - np.einsum("qn,nq->q", k_cross, kinv_kt)
    return mean, np.clip(var, 0.0, None)


def posterior(model: GpModel, theta):
    """Posterior (mean, variance) at theta; in probit mode the mean is
    mapped back through the Gaussian CDF for reporting, the variance stays
    in latent space."""
    mean, var = _posterior_latent(model, theta)
    mean = model.from_latent(mean)
    if np.ndim(theta) == 1:
        return float(mean[0]), float(var[0])
    return mean, var


def acquisition(model: GpModel, theta, beta, use_std=False):
    """Upper-confidence score beta*cov + mean in latent space.

    The literal formula weights the posterior variance; ``use_std=True``
    switches to the standard deviation."""
    mean, var = _posterior_latent(model, theta)
    spread = np.sqrt(var) if use_std else var
    ac = beta * spread + mean
    return float(ac[0]) if np.ndim(theta) == 1 else ac


def argmax_acquisition(model: GpModel, cfg: AcquisitionConfig, beta):
    """Segmented argmax: coarse grid per cell, then two refinements of the
    best cell; ties broken toward lexicographically smallest theta."""
    lo, hi = model._lo, model._hi
    seg = cfg.segments
    edges = [np.linspace(lo[i], hi[i], seg + 1) for i in range(2)]

    def grid(b0, b1, n=5):
        g0 = np.linspace(b0[0], b0[1], n)
        g1 = np.linspace(b1[0], b1[1], n)
        pts = np.stack(np.meshgrid(g0, g1, indexing="ij"), axis=-1)
        return pts.reshape(-1, 2)

    # level 0: all cells at once
    cells = []
    pts = []
    for i in range(seg):
        for j in range(seg):
            b0 = (edges[0][i], edges[0][i + 1])
            b1 = (edges[1][j], edges[1][j + 1])
            cells.append((b0, b1))
            pts.append(grid(b0, b1))
    pts = np.concatenate(pts, axis=0)
    ac = acquisition(model, pts, beta, use_std=cfg.use_std)
    best_idx = _argmax_lex(ac, pts)
    best_pt, best_val = pts[best_idx], ac[best_idx]
    b0, b1 = cells[best_idx // 25]

    widths = np.array([b0[1] - b0[0], b1[1] - b1[0]])
    for level in (1, 2):
        half = widths / (2.0 * 4**level)
        w0 = (max(b0[0], best_pt[0] - half[0]), min(b0[1], best_pt[0] + half[0]))
        w1 = (max(b1[0], best_pt[1] - half[1]), min(b1[1], best_pt[1] + half[1]))
        pts = grid(w0, w1)
        ac = acquisition(model, pts, beta, use_std=cfg.use_std)
        idx = _argmax_lex(ac, pts)
        if ac[idx] >= best_val:
            best_pt, best_val = pts[idx], ac[idx]
    return best_pt


def _argmax_lex(values, pts):
    top = np.max(values)
    ties = np.flatnonzero(values == top)
    if len(ties) == 1:
        return int(ties[0])
    order = np.lexsort((pts[ties, 1], pts[ties, 0]))
    return int(ties[order[0]])


@dataclass
class OptimizationTrace:
    """Per-iteration record of the suggest/observe loop."""

    records: list
    model: GpModel

    @property
    def best(self):
        done = [r for r in self.records if r["f"] is not None]
        return max(done, key=lambda r: r["f"])

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    @staticmethod
    def read_jsonl(path):
        with open(path) as fh:
            return [json.loads(line) for line in fh
                    if line.strip() and not line.startswith("#")]


def suggest_observe_loop(evaluator, cfg: AcquisitionConfig, domain,
                         seed=0, target=None, transform_mode="probit",
                         jitter=1e-8, refit_every=1, resume_records=None):
    """Run the full Bayesian-optimization loop.

    ``evaluator`` maps theta -> (noisy) objective in (0,1).  The loop makes
    ``n_init`` uniform-random evaluations, then ``budget`` acquisition-led
    ones, refitting hyperparameters every ``refit_every`` iterations and
    stopping early once ``target`` is reached.  A failed evaluation is
    recorded as a missing observation and retried once.
    """
    model = GpModel(domain=domain, transform_mode=transform_mode,
                    jitter=jitter)
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(0xB0,))))
    records = []

    def observe(it, theta, beta):
        for attempt in (0, 1):
            try:
                f = float(evaluator(np.asarray(theta, dtype=float)))
            except Exception as exc:  # noqa: BLE001 - evaluator is a black box
                records.append({"iter": it, "theta": list(map(float, theta)),
                                "f": None, "beta": beta,
                                "error": f"{type(exc).__name__}: {exc}"})
                if attempt == 1:
                    raise
                continue
            model.add(theta, f)
            v, length = model.hyper
            records.append({"iter": it, "theta": list(map(float, theta)),
                            "f": f, "beta": beta, "V": v, "I": length})
            return f

    if resume_records:
        for r in resume_records:
            if r.get("f") is not None:
                model.add(np.array(r["theta"]), r["f"])
                records.append(dict(r))

    lo = np.array([b[0] for b in domain], dtype=float)
    hi = np.array([b[1] for b in domain], dtype=float)
    it = len(records)
    n_new_init = max(0, cfg.n_init - it)
    for _ in range(n_new_init):
        theta = lo + rng.random(2) * (hi - lo)
        observe(it, theta, beta=None)
        it += 1

    best_f = max((r["f"] for r in records if r["f"] is not None),
                 default=-np.inf)
    if target is not None and best_f >= target:
        return OptimizationTrace(records=records, model=model)

    for k in range(cfg.budget):
        if model.n_obs >= 2 and k % refit_every == 0:
            fit_hyperparameters(model)
        beta = cfg.beta_at(k)
        theta = argmax_acquisition(model, cfg, beta)
        f = observe(it, theta, beta)
        it += 1
        if f is not None and target is not None and f >= target:
            break
    return OptimizationTrace(records=records, model=model)
