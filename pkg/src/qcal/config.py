"""Configuration loading and provenance hashing.

One TOML file holds all experiment settings in sections mirroring the
module types: ``[environment]``, ``[pulse]``, ``[estimator]``, ``[bayes]``,
``[calibration]`` and ``[sweep]``.  Frequencies are quoted in lab units
with unit-suffixed keys (``omega0_ghz``, ``m_mhz``, ``phi_mhz``, ...) and
converted to the internal rad/ns convention on load.  ``config_hash`` is
the SHA-256 of the fully resolved (defaulted) configuration, so every
emitted artifact can name the exact inputs that produced it.
"""

from __future__ import annotations

import hashlib
import json
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field

from .env import EnvParams, mhz, ghz
from .pulse import PulseParams, calibrated_amplitude
from .fidelity import GateSpec
from .bayes import AcquisitionConfig
from .estimator import PSE_GAIN_FORMS


class ConfigError(ValueError):
    """Malformed or inconsistent configuration file."""


@dataclass(frozen=True)
class EstimatorSettings:
    """Filter settings shared by all estimator-sourced runs."""

    p_init: float = 0.01
    pse_gain_form: str = "sqrt_m"
    fidelity_source: str = "pse"

    def __post_init__(self):
        if self.p_init <= 0:
            raise ConfigError("estimator.p_init must be positive")
        if self.pse_gain_form not in PSE_GAIN_FORMS:
            raise ConfigError(
                f"estimator.pse_gain_form must be one of {PSE_GAIN_FORMS}")
        if self.fidelity_source not in ("rose", "pse"):
            raise ConfigError(
                "estimator.fidelity_source must be 'rose' or 'pse'")


@dataclass(frozen=True)
class SweepSettings:
    """Parameter-mismatch sweep settings (Fig. 6 / Fig. 7 style runs)."""

    detuning_start_mhz: float = 0.0
    detuning_stop_mhz: float = -30.0
    detuning_step_mhz: float = 0.1
    drive_ghz: tuple = (4.90, 4.885)
    r_points: int = 11
    n_traj: int = 50

    def detunings_mhz(self):
        start, stop, step = (self.detuning_start_mhz, self.detuning_stop_mhz,
                             self.detuning_step_mhz)
        if step <= 0:
            raise ConfigError("sweep.detuning_step_mhz must be positive")
        n = int(round(abs(stop - start) / step)) + 1
        sign = -1.0 if stop < start else 1.0
        return [start + sign * i * step for i in range(n)]


@dataclass
class CalibrationConfig:
    """Everything needed to reproduce one calibration run."""

    env: EnvParams = field(default_factory=EnvParams)
    pulse: PulseParams = None
    gate: GateSpec = field(default_factory=GateSpec)
    estimator: EstimatorSettings = field(default_factory=EstimatorSettings)
    bo: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    n_traj: int = 50
    dt: float = 0.01
    seed: int = 0
    mode: str = "rwa"
    target_fidelity: float = 0.99
    resolved: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pulse is None:
            self.pulse = PulseParams(amp=calibrated_amplitude())
        if not 0.0 < self.target_fidelity < 1.0:
            raise ConfigError("calibration.target_fidelity must be in (0,1)")
        if self.n_traj < 1:
            raise ConfigError("calibration.n_traj must be >= 1")
        if self.dt <= 0:
            raise ConfigError("calibration.dt_ns must be positive")
        if self.mode not in ("rwa", "lab"):
            raise ConfigError("calibration.mode must be 'rwa' or 'lab'")
        if not self.resolved:
            self.resolved = resolve_dict(self)

    @property
    def config_hash(self):
        text = json.dumps(self.resolved, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _section(data, name):
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section [{name}] must be a table")
    return dict(sec)


def _take(sec, key, default, kind=float):
    val = sec.pop(key, default)
    try:
        return kind(val) if val is not None else None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {val!r}") from exc


def _reject_unknown(name, sec):
    if sec:
        raise ConfigError(
            f"unknown keys in [{name}]: {sorted(sec)}; "
            "check spelling against example.conf")


def load_config(path, seed_override=None):
    """Parse a TOML config file into a CalibrationConfig."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
    return config_from_dict(data, seed_override=seed_override)


def config_from_dict(data, seed_override=None):
    e = _section(data, "environment")
    try:
        env = EnvParams(
            alpha_c=_take(e, "alpha_c", 0.5),
            r=_take(e, "r", 0.01),
            omega0=ghz(_take(e, "omega0_ghz", 4.88)),
            kbt=_take(e, "kbt_rad_per_ns", None),
            eta=_take(e, "eta", 1.0),
            m_strength=mhz(_take(e, "m_mhz", 2.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"[environment]: {exc}") from exc
    _reject_unknown("environment", e)

    p = _section(data, "pulse")
    t_g = _take(p, "t_g_ns", 20.0)
    sigma = _take(p, "sigma_ns", t_g / 4.0)
    offset = _take(p, "offset", 0.0)
    angle = _take(p, "angle_pi", 1.0) * math.pi
    amp = _take(p, "amp", None)
    if amp is None:
        amp = calibrated_amplitude(t_g=t_g, sigma=sigma, offset=offset,
                                   angle=angle)
    try:
        pulse = PulseParams(
            amp=amp, offset=offset, sigma=sigma, t_g=t_g,
            w_d=ghz(_take(p, "w_d_ghz", 4.90)),
            delta=ghz(_take(p, "delta_ghz", -0.25)),
            alpha_s=_take(p, "alpha_s", 0.0),
            phi=mhz(_take(p, "phi_mhz", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"[pulse]: {exc}") from exc
    _reject_unknown("pulse", p)

    s = _section(data, "estimator")
    est = EstimatorSettings(
        p_init=_take(s, "p_init", 0.01),
        pse_gain_form=_take(s, "pse_gain_form", "sqrt_m", str),
        fidelity_source=_take(s, "fidelity_source", "pse", str),
    )
    _reject_unknown("estimator", s)

    b = _section(data, "bayes")
    try:
        bo = AcquisitionConfig(
            beta0=_take(b, "beta0", 2.0),
            decay=_take(b, "decay", None),
            segments=_take(b, "segments", 10, int),
            budget=_take(b, "budget", 15, int),
            n_init=_take(b, "n_init", 10, int),
            use_std=_take(b, "use_std", False, bool),
        )
    except ValueError as exc:
        raise ConfigError(f"[bayes]: {exc}") from exc
    transform_mode = _take(b, "transform_mode", "probit", str)
    jitter = _take(b, "jitter", 1e-8)
    refit_every = _take(b, "refit_every", 1, int)
    if transform_mode not in ("probit", "direct"):
        raise ConfigError("bayes.transform_mode must be 'probit' or 'direct'")
    _reject_unknown("bayes", b)

    w = _section(data, "sweep")
    sweep = SweepSettings(
        detuning_start_mhz=_take(w, "detuning_start_mhz", 0.0),
        detuning_stop_mhz=_take(w, "detuning_stop_mhz", -30.0),
        detuning_step_mhz=_take(w, "detuning_step_mhz", 0.1),
        drive_ghz=tuple(w.pop("drive_ghz", (4.90, 4.885))),
        r_points=_take(w, "r_points", 11, int),
        n_traj=_take(w, "n_traj", 50, int),
    )
    _reject_unknown("sweep", w)

    c = _section(data, "calibration")
    axis = c.pop("gate_axis", [1.0, 0.0, 0.0])
    try:
        gate = GateSpec(axis=tuple(float(a) for a in axis),
                        angle=_take(c, "gate_angle_pi", 1.0) * math.pi)
    except ValueError as exc:
        raise ConfigError(f"[calibration] gate: {exc}") from exc
    seed = _take(c, "seed", 0, int)
    if seed_override is not None:
        seed = int(seed_override)
    cfg = CalibrationConfig(
        env=env, pulse=pulse, gate=gate, estimator=est, bo=bo, sweep=sweep,
        n_traj=_take(c, "n_traj", 50, int),
        dt=_take(c, "dt_ns", 0.01),
        seed=seed,
        mode=_take(c, "mode", "rwa", str),
        target_fidelity=_take(c, "target_fidelity", 0.99),
    )
    _reject_unknown("calibration", c)

    extra = {"bayes_transform_mode": transform_mode, "bayes_jitter": jitter,
             "bayes_refit_every": refit_every}
    cfg.resolved = resolve_dict(cfg, extra)
    return cfg


def resolve_dict(cfg: CalibrationConfig, extra=None):
    """Fully defaulted configuration as plain JSON-ready data (rad/ns)."""
    d = {
        "environment": {
            "alpha_c": cfg.env.alpha_c, "r": cfg.env.r,
            "omega0": cfg.env.omega0, "kbt": cfg.env.kbt,
            "eta": cfg.env.eta, "m_strength": cfg.env.m_strength,
        },
        "pulse": {
            "amp": cfg.pulse.amp, "offset": cfg.pulse.offset,
            "sigma": cfg.pulse.sigma, "t_g": cfg.pulse.t_g,
            "w_d": cfg.pulse.w_d, "delta": cfg.pulse.delta,
            "alpha_s": cfg.pulse.alpha_s, "phi": cfg.pulse.phi,
        },
        "estimator": {
            "p_init": cfg.estimator.p_init,
            "pse_gain_form": cfg.estimator.pse_gain_form,
            "fidelity_source": cfg.estimator.fidelity_source,
        },
        "bayes": {
            "beta0": cfg.bo.beta0, "decay": cfg.bo.decay,
            "segments": cfg.bo.segments, "budget": cfg.bo.budget,
            "n_init": cfg.bo.n_init, "use_std": cfg.bo.use_std,
        },
        "sweep": {
            "detuning_start_mhz": cfg.sweep.detuning_start_mhz,
            "detuning_stop_mhz": cfg.sweep.detuning_stop_mhz,
            "detuning_step_mhz": cfg.sweep.detuning_step_mhz,
            "drive_ghz": list(cfg.sweep.drive_ghz),
            "r_points": cfg.sweep.r_points,
            "n_traj": cfg.sweep.n_traj,
        },
        "calibration": {
            "gate_axis": list(cfg.gate.axis), "gate_angle": cfg.gate.angle,
            "n_traj": cfg.n_traj, "dt": cfg.dt, "seed": cfg.seed,
            "mode": cfg.mode, "target_fidelity": cfg.target_fidelity,
        },
    }
    if extra:
        d["extra"] = dict(extra)
    return d
