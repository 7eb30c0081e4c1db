"""Non-Markovian environment: dissipation and diffusion kernels.

The qubit couples to an ohmic bath with a Lorentz-Drude cutoff at
``omega_c = r * omega0``.  The resulting time-dependent dissipation
``gamma(t)`` and diffusion ``delta(t)`` coefficients have closed forms;
both vanish at t=0 and relax to their Markovian plateaus on the memory
timescale ``1/(r*omega0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def mhz(f):
    """Angular frequency in rad/ns for a lab frequency quoted in MHz."""
    return TWO_PI * f * 1e-3


def ghz(f):
    """Angular frequency in rad/ns for a lab frequency quoted in GHz."""
    return TWO_PI * f


@dataclass(frozen=True)
class EnvParams:
    """Environment and measurement parameters.

    alpha_c     dimensionless system-bath coupling constant
    r           cutoff ratio omega_c / omega0
    omega0      qubit angular frequency (rad/ns)
    kbt         temperature scale in the same units as omega0;
                defaults to 0.05*omega0 (low-temperature regime)
    eta         detection efficiency in (0, 1]
    m_strength  measurement strength M (rad/ns)
    """

    alpha_c: float = 0.5
    r: float = 0.01
    omega0: float = ghz(4.88)
    kbt: float | None = None
    eta: float = 1.0
    m_strength: float = mhz(2.0)

    def __post_init__(self):
        if self.kbt is None:
            object.__setattr__(self, "kbt", 0.05 * self.omega0)
        if self.alpha_c <= 0 or self.r <= 0 or self.omega0 <= 0:
            raise ValueError("alpha_c, r and omega0 must be positive")
        if self.kbt < 0:
            raise ValueError("kbt must be non-negative")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.m_strength < 0:
            raise ValueError("m_strength must be non-negative")

    @property
    def omega_c(self):
        return self.r * self.omega0


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    return t


def gamma_t(p: EnvParams, t):
    """Dissipation coefficient gamma(t) in rad/ns.

    Zero at t=0, relaxing to the plateau alpha_c^2*omega0*r^2/(1+r^2).
    Accepts scalars or arrays.
    """
    t = _check_time(t)
    w0, r = p.omega0, p.r
    decay = np.exp(-r * w0 * t)
    bracket = 1.0 - decay * np.cos(w0 * t) - r * decay * np.sin(w0 * t)
    return p.alpha_c**2 * w0 * r**2 / (1.0 + r**2) * bracket


def delta_t(p: EnvParams, t):
    """Diffusion coefficient delta(t) in rad/ns.

    Zero at t=0 and for kbt=0; relaxes to 2*alpha_c^2*kbt*r^2/(1+r^2).
    Accepts scalars or arrays.
    """
    t = _check_time(t)
    w0, r = p.omega0, p.r
    decay = np.exp(-r * w0 * t)
    brace = 1.0 - decay * (np.cos(w0 * t) - np.sin(w0 * t) / r)
    return 2.0 * p.alpha_c**2 * p.kbt * r**2 / (1.0 + r**2) * brace


def gamma_inf(p: EnvParams):
    """Markovian plateau of gamma(t)."""
    return p.alpha_c**2 * p.omega0 * p.r**2 / (1.0 + p.r**2)


def delta_inf(p: EnvParams):
    """Markovian plateau of delta(t)."""
    return 2.0 * p.alpha_c**2 * p.kbt * p.r**2 / (1.0 + p.r**2)


def spectral_density(p: EnvParams, w):
    """Unnormalized bath spectral density w * wc^2 / (wc^2 + w^2).

    Only used by the quadrature oracle in the tests; the production path
    uses the closed-form kernels above.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("bath frequency must be non-negative")
    wc = p.omega_c
    return w * wc**2 / (wc**2 + w**2)
