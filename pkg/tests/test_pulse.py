"""Pulse-shape tests: envelopes, DRAG derivative oracle, calibration."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcal.env import ghz, mhz
from qcal.pulse import (ALPHA_S_DOMAIN, PHI_DOMAIN, PulseParams,
                        calibrated_amplitude, control_at, control_rwa,
                        detuning_rwa, envelope_x, envelope_y, pi_pulse)


def test_defaults():
    p = pi_pulse()
    assert p.t_g == 20.0 and p.sigma == 5.0
    assert p.w_d == pytest.approx(ghz(4.90))
    assert p.delta == pytest.approx(-ghz(0.25))
    assert p.alpha_s == 0.0 and p.phi == 0.0


@pytest.mark.parametrize("kw", [
    {"t_g": 0.0}, {"sigma": -1.0}, {"alpha_s": 0.5}, {"alpha_s": -1.5},
    {"phi": 0.1}, {"phi": -1.0},
])
def test_domain_validation(kw):
    with pytest.raises(ValueError):
        PulseParams(amp=1.0, **kw)


def test_drive_frequency_shift():
    p = PulseParams(amp=1.0, phi=mhz(-5.0))
    assert p.drive_frequency == pytest.approx(p.w_d + 2.0 * mhz(-5.0))
    assert detuning_rwa(p, ghz(4.88)) == pytest.approx(
        ghz(4.88) - p.drive_frequency)


def test_with_theta():
    p = pi_pulse()
    q = p.with_theta(-0.4, mhz(-3.0))
    assert q.alpha_s == -0.4 and q.phi == pytest.approx(mhz(-3.0))
    assert q.amp == p.amp  # immutable base unchanged
    assert p.alpha_s == 0.0


def test_envelope_x_shape_and_truncation():
    p = pi_pulse()
    assert envelope_x(p, p.t_g / 2.0) == pytest.approx(p.amp)
    assert envelope_x(p, -0.1) == 0.0
    assert envelope_x(p, p.t_g + 0.1) == 0.0
    t = np.linspace(0, p.t_g, 11)
    vals = envelope_x(p, t)
    assert np.all(vals > 0) and vals.argmax() == 5


def test_calibrated_amplitude_rotation_angle():
    # co-rotating rotation angle = 0.5 * integral eps_x dt must equal pi
    p = pi_pulse()
    t = np.linspace(0, p.t_g, 200001)
    angle = 0.5 * np.trapezoid(envelope_x(p, t), t)
    assert angle == pytest.approx(math.pi, rel=1e-10)


def test_calibrated_amplitude_with_offset_and_angle():
    amp = calibrated_amplitude(t_g=30.0, sigma=6.0, offset=0.01,
                               angle=math.pi / 2)
    p = PulseParams(amp=amp, offset=0.01, sigma=6.0, t_g=30.0)
    t = np.linspace(0, p.t_g, 200001)
    angle = 0.5 * np.trapezoid(envelope_x(p, t), t)
    assert angle == pytest.approx(math.pi / 2, rel=1e-9)


def test_envelope_y_matches_finite_difference():
    p = pi_pulse(alpha_s=-0.5)
    h = 1e-6
    for t in [2.0, 7.3, 10.0, 15.1]:
        fd = (envelope_x(p, t + h) - envelope_x(p, t - h)) / (2 * h)
        assert envelope_y(p, t) == pytest.approx(
            (p.alpha_s / p.delta) * fd, rel=1e-6, abs=1e-12)


def test_envelope_y_zero_crossing_at_center():
    # derivative of the Gaussian vanishes exactly at t_g/2
    p = pi_pulse(alpha_s=-0.5)
    assert envelope_y(p, p.t_g / 2.0) == pytest.approx(0.0, abs=1e-15)
    assert envelope_y(p, p.t_g / 2.0 - 1.0) > 0.0 > envelope_y(
        p, p.t_g / 2.0 + 1.0)


def test_envelope_y_zero_when_alpha_zero():
    p = pi_pulse(alpha_s=0.0)
    t = np.linspace(0, p.t_g, 50)
    assert np.allclose(envelope_y(p, t), 0.0)


def test_envelope_y_integrates_to_zero():
    p = pi_pulse(alpha_s=-0.7)
    t = np.linspace(0, p.t_g, 200001)
    assert np.trapezoid(envelope_y(p, t), t) == pytest.approx(0.0, abs=1e-10)


def test_drag_requires_nonzero_delta():
    p = PulseParams(amp=1.0, delta=0.0, alpha_s=-0.1)
    with pytest.raises(ZeroDivisionError):
        envelope_y(p, 1.0)


def test_control_at_carrier():
    p = pi_pulse(alpha_s=-0.3, phi=mhz(-5.0))
    w = p.drive_frequency
    for t in [0.0, 3.7, 11.0]:
        ux, uy = control_at(p, t)
        assert ux == pytest.approx(np.cos(w * t) * envelope_x(p, t))
        assert uy == pytest.approx(np.sin(w * t) * envelope_y(p, t))
    with pytest.raises(ValueError):
        control_at(p, -1.0)


def test_control_rwa_form():
    p = pi_pulse(alpha_s=-0.3)
    t = np.linspace(0, p.t_g, 31)
    ux, uy = control_rwa(p, t)
    assert np.allclose(ux, 0.5 * (envelope_x(p, t) + envelope_y(p, t)))
    assert np.allclose(uy, 0.0)


@settings(max_examples=40, deadline=None)
@given(alpha_s=st.floats(*ALPHA_S_DOMAIN), phi=st.floats(*PHI_DOMAIN),
       t=st.floats(0.0, 20.0))
def test_controls_bounded_by_envelope_peak(alpha_s, phi, t):
    p = pi_pulse(alpha_s=alpha_s, phi=phi)
    bound = abs(p.amp) + abs(p.alpha_s / p.delta) * abs(p.amp) * 2.0 / p.sigma
    ux, uy = control_at(p, t)
    assert abs(ux) <= bound + 1e-12 and abs(uy) <= bound + 1e-12
