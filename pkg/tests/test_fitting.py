import math

import numpy as np
import pytest

from rydsim.protocols import fit_rabi_line, fit_sinusoid, wrap_phase
from rydsim.protocols.fitting import rabi_line


def test_exact_sin2_recovered():
    t = np.linspace(0, 3, 61)
    y = np.cos(2 * np.pi * 0.4 * t) ** 2  # = 0.5 + 0.5 cos(2 pi 0.8 t)
    fit = fit_sinusoid(t, y)
    assert fit.converged
    assert fit.frequency == pytest.approx(0.8, abs=1e-6)
    assert fit.amplitude == pytest.approx(0.5, abs=1e-6)
    assert fit.offset == pytest.approx(0.5, abs=1e-6)
    assert abs(wrap_phase(fit.phase)) < 1e-6


def test_noisy_sinusoid_within_errors():
    rng = np.random.default_rng(3)
    t = np.linspace(0, 4, 81)
    y = 0.4 + 0.3 * np.cos(2 * np.pi * 1.1 * t + 0.7) + rng.normal(0, 0.02, t.size)
    fit = fit_sinusoid(t, y, sigma=np.full(t.size, 0.02))
    assert abs(fit.frequency - 1.1) < 4 * fit.errors["frequency"]
    assert fit.errors["frequency"] < 0.01


def test_constant_trace_flagged():
    t = np.linspace(0, 3, 40)
    fit = fit_sinusoid(t, np.full(t.size, 0.3))
    assert not fit.converged
    assert "degenerate" in fit.message


def test_too_few_points():
    fit = fit_sinusoid([0, 1, 2], [0, 1, 0])
    assert not fit.converged
    assert math.isnan(fit.frequency)


def test_span_below_one_period_flagged():
    t = np.linspace(0, 0.5, 30)
    fit = fit_sinusoid(t, np.cos(2 * np.pi * 0.8 * t))
    assert not fit.converged
    assert "period" in fit.message


def test_shape_mismatch_does_not_raise():
    assert not fit_sinusoid([0, 1], [0, 1, 2]).converged


def test_fixed_frequency_phase():
    t = np.linspace(0, 2, 41)
    fit = fit_sinusoid(t, 0.5 + 0.5 * np.cos(2 * np.pi * 0.8 * t + 1.2), fixed_frequency=0.8)
    assert fit.phase == pytest.approx(1.2, abs=1e-10)
    assert fit.amplitude == pytest.approx(0.5, abs=1e-10)
    assert fit.frequency == 0.8


def test_fixed_frequency_constant_flagged():
    fit = fit_sinusoid(np.linspace(0, 2, 20), np.zeros(20), fixed_frequency=0.8)
    assert not fit.converged


@pytest.mark.parametrize("phi,expected", [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (3 * math.pi, math.pi),
                                          (2.5 * math.pi, 0.5 * math.pi), (-0.5, -0.5)])
def test_wrap_phase(phi, expected):
    assert wrap_phase(phi) == pytest.approx(expected, abs=1e-12)


def test_rabi_line_center():
    d = np.linspace(-5, 5, 201)
    p = rabi_line(d, 1.37, 1.0, 1.0, 0.0, 0.5)
    fit = fit_rabi_line(d, p, 0.5, 0.8)
    assert fit.converged
    assert fit.center == pytest.approx(1.37, abs=1e-8)
    assert fit.rabi == pytest.approx(1.0, abs=1e-6)


def test_rabi_line_peak_at_resonance():
    # a pi pulse transfers fully on resonance
    assert rabi_line(0.0, 0.0, 1.0, 1.0, 0.0, 0.5) == pytest.approx(1.0)


def test_flat_line_flagged():
    fit = fit_rabi_line(np.linspace(-1, 1, 21), np.zeros(21), 0.5, 1.0)
    assert not fit.converged
