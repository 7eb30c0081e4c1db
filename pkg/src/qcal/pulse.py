"""DRAG-shaped microwave control pulses.

The in-phase envelope is a truncated Gaussian, the quadrature envelope is
its scaled analytic derivative (DRAG).  The phase knob ``phi`` shifts the
effective drive frequency by 2*phi; the two calibration parameters are
``alpha_s`` (DRAG scale) and ``phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .env import TWO_PI, ghz

#: search domain for (alpha_s, phi) used by the Bayesian optimizer;
#: phi in rad/ns, i.e. [-100, 0] MHz.
ALPHA_S_DOMAIN = (-1.0, 0.0)
PHI_DOMAIN = (-TWO_PI * 0.1, 0.0)


@dataclass(frozen=True)
class PulseParams:
    """Gaussian-DRAG pulse description.

    amp      Gaussian amplitude A (rad/ns)
    offset   baseline B (rad/ns)
    sigma    Gaussian width (ns)
    t_g      gate duration (ns)
    w_d      drive angular frequency (rad/ns)
    delta    qubit anharmonicity (rad/ns, negative for transmons)
    alpha_s  DRAG scale, search domain [-1, 0]
    phi      phase-correction parameter (rad/ns), search domain [-2*pi*0.1, 0]
    """

    amp: float
    offset: float = 0.0
    sigma: float = 5.0
    t_g: float = 20.0
    w_d: float = ghz(4.90)
    delta: float = -ghz(0.25)
    alpha_s: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if self.t_g <= 0 or self.sigma <= 0:
            raise ValueError("t_g and sigma must be positive")
        if not ALPHA_S_DOMAIN[0] <= self.alpha_s <= ALPHA_S_DOMAIN[1]:
            raise ValueError("alpha_s outside search domain [-1, 0]")
        if not PHI_DOMAIN[0] <= self.phi <= PHI_DOMAIN[1]:
            raise ValueError("phi outside search domain [-2*pi*0.1, 0] rad/ns")

    @property
    def drive_frequency(self):
        """Effective drive frequency including the 2*phi shift."""
        return self.w_d + 2.0 * self.phi

    def with_theta(self, alpha_s, phi):
        return replace(self, alpha_s=float(alpha_s), phi=float(phi))


def calibrated_amplitude(t_g=20.0, sigma=None, offset=0.0, angle=math.pi):
    """Amplitude A such that the co-rotating rotation angle equals `angle`.

    The co-rotating drive is (eps_x + eps_y)/2 and the DRAG quadrature
    integrates to zero, so the angle is 0.5 * integral of eps_x over the
    gate (truncated-Gaussian integral plus the baseline term).
    """
    if sigma is None:
        sigma = t_g / 4.0
    gauss_area = sigma * math.sqrt(math.pi) * math.erf(t_g / (2.0 * sigma))
    return (2.0 * angle - offset * t_g) / gauss_area


def pi_pulse(w_d=ghz(4.90), t_g=20.0, sigma=None, alpha_s=0.0, phi=0.0,
             delta=-ghz(0.25)):
    """Amplitude-calibrated pi pulse with the given carrier and knobs."""
    if sigma is None:
        sigma = t_g / 4.0
    amp = calibrated_amplitude(t_g=t_g, sigma=sigma)
    return PulseParams(amp=amp, sigma=sigma, t_g=t_g, w_d=w_d,
                       delta=delta, alpha_s=alpha_s, phi=phi)


def envelope_x(p: PulseParams, t):
    """In-phase envelope A*exp(-(t-t_g/2)^2/sigma^2) + B; zero off-gate."""
    t = np.asarray(t, dtype=float)
    inside = (t >= 0.0) & (t <= p.t_g)
    u = (t - p.t_g / 2.0) / p.sigma
    val = p.amp * np.exp(-u * u) + p.offset
    out = np.where(inside, val, 0.0)
    return out if out.ndim else float(out)


def envelope_y(p: PulseParams, t):
    """DRAG quadrature (alpha_s/delta) * d eps_x/dt, analytic; zero off-gate."""
    if p.delta == 0.0:
        raise ZeroDivisionError("anharmonicity delta must be non-zero for DRAG")
    t = np.asarray(t, dtype=float)
    inside = (t >= 0.0) & (t <= p.t_g)
    u = t - p.t_g / 2.0
    dgauss = p.amp * (-2.0 * u / p.sigma**2) * np.exp(-(u / p.sigma) ** 2)
    out = np.where(inside, (p.alpha_s / p.delta) * dgauss, 0.0)
    return out if out.ndim else float(out)


def control_at(p: PulseParams, t):
    """Lab-frame controls (u_x, u_y) at time t.

    The phase modification u -> u*exp(i*2*phi*t) is realized as a 2*phi
    shift of the carrier applied to the quadrature pair, which reduces to
    the plain quadrature decomposition at phi = 0.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    w = p.drive_frequency
    ux = np.cos(w * t) * envelope_x(p, t)
    uy = np.sin(w * t) * envelope_y(p, t)
    if ux.ndim:
        return ux, uy
    return float(ux), float(uy)


def control_rwa(p: PulseParams, t):
    """Rotating-frame controls in the frame of the effective drive.

    Keeping only the co-rotating component of the two-quadrature drive
    gives u_x = (eps_x + eps_y)/2 and u_y = 0.
    """
    ux = 0.5 * (envelope_x(p, t) + envelope_y(p, t))
    return ux, np.zeros_like(np.asarray(ux, dtype=float))


def detuning_rwa(p: PulseParams, omega0):
    """Precession rate in the rotating frame: omega0 - (w_d + 2*phi)."""
    return omega0 - p.drive_frequency
