"""Least-squares fits used to extract frequencies, phases and line centers."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

TWO_PI = 2.0 * np.pi


@dataclass
class SinusoidFit:
    """``offset + amplitude * cos(2 pi frequency t + phase)`` with amplitude >= 0."""

    amplitude: float
    frequency: float
    phase: float
    offset: float
    residual: float
    errors: dict = field(default_factory=dict)
    converged: bool = True
    message: str = ""

    def value(self, t):
        return self.offset + self.amplitude * np.cos(TWO_PI * self.frequency * np.asarray(t) + self.phase)

    def as_dict(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "frequency": self.frequency,
            "phase": self.phase,
            "offset": self.offset,
            "residual": self.residual,
            "errors": dict(self.errors),
            "converged": self.converged,
            "message": self.message,
        }


def wrap_phase(phi: float) -> float:
    """Map to (-pi, pi]."""
    out = math.remainder(phi, TWO_PI)
    return math.pi if out == -math.pi else out


def _weights(y, sigma):
    if sigma is None:
        return None
    s = np.asarray(sigma, dtype=float)
    if s.shape != y.shape:
        raise ValueError("sigma must match the data shape")
    positive = s[s > 0]
    floor = positive.min() if positive.size else 1.0
    return np.where(s > 0, s, floor)


def _linear(t, y, freq, sigma):
    w = TWO_PI * freq * t
    a = np.column_stack([np.cos(w), np.sin(w), np.ones_like(t)])
    if sigma is not None:
        aw, yw = a / sigma[:, None], y / sigma
    else:
        aw, yw = a, y
    coef, *_ = np.linalg.lstsq(aw, yw, rcond=None)
    resid = yw - aw @ coef
    return coef, aw, float(resid @ resid)


def _polar(c, s):
    # a cos(wt) + b sin(wt) = A cos(wt + phi), with a = A cos(phi), b = -A sin(phi)
    return math.hypot(c, s), math.atan2(-s, c)


def fit_sinusoid(t, y, fixed_frequency: float | None = None, sigma=None) -> SinusoidFit:
    """Fit a sinusoid; frequency free unless ``fixed_frequency`` is given.

    Never raises on bad data: problems are reported through ``converged``
    and ``message``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    sig = _weights(y, sigma)
    if t.shape != y.shape or t.ndim != 1:
        return SinusoidFit(math.nan, math.nan, math.nan, math.nan, math.nan, converged=False,
                           message="t and y must be 1-D arrays of equal length")
    scale = max(float(np.ptp(y)), float(np.max(np.abs(y), initial=0.0)), 1.0)

    if fixed_frequency is not None:
        if t.size < 3:
            return SinusoidFit(math.nan, fixed_frequency, math.nan, math.nan, math.nan, converged=False,
                               message="need at least 3 points")
        coef, aw, chi2 = _linear(t, y, fixed_frequency, sig)
        amp, phase = _polar(coef[0], coef[1])
        cov = _covariance(aw, chi2, t.size, sig is not None)
        errs = {"offset": _sd(cov, 2)}
        if amp > 0:
            # propagate (a, b) covariance to amplitude and phase
            ja = np.array([coef[0], coef[1]]) / amp
            jp = np.array([coef[1], -coef[0]]) / amp**2
            sub = cov[:2, :2]
            errs["amplitude"] = float(np.sqrt(max(ja @ sub @ ja, 0.0)))
            errs["phase"] = float(np.sqrt(max(jp @ sub @ jp, 0.0)))
        rms = _rms(y, t, amp, fixed_frequency, phase, coef[2])
        fit = SinusoidFit(amp, float(fixed_frequency), phase, float(coef[2]), rms, errs)
        if amp <= 1e-9 * scale:
            fit.converged = False
            fit.message = "degenerate: amplitude is zero"
        return fit

    if t.size < 8:
        return SinusoidFit(math.nan, math.nan, math.nan, math.nan, math.nan, converged=False,
                           message="free-frequency fit needs at least 8 points")
    span = float(t.max() - t.min())
    if span <= 0:
        return SinusoidFit(math.nan, math.nan, math.nan, math.nan, math.nan, converged=False,
                           message="time axis has zero span")
    dt = float(np.median(np.diff(np.sort(t))))
    fmax = 0.5 / dt if dt > 0 else 10.0 / span
    grid = np.linspace(0.25 / span, fmax, max(2000, int(40 * fmax * span)))
    chi = np.array([_linear(t, y, f, sig)[2] for f in grid])
    f0 = float(grid[int(np.argmin(chi))])
    coef, _, _ = _linear(t, y, f0, sig)
    amp0, ph0 = _polar(coef[0], coef[1])
    if amp0 <= 1e-9 * scale:
        return SinusoidFit(amp0, f0, ph0, float(coef[2]), _rms(y, t, amp0, f0, ph0, coef[2]), converged=False,
                           message="degenerate: no oscillation in data")

    def model(tt, f, a, b, c):
        w = TWO_PI * f * tt
        return a * np.cos(w) + b * np.sin(w) + c

    try:
        with warnings.catch_warnings():
            # an exact fit leaves the covariance undefined; that is not a failure
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(model, t, y, p0=[f0, coef[0], coef[1], coef[2]], sigma=sig,
                                   absolute_sigma=sig is not None, maxfev=20000, xtol=1e-14, ftol=1e-14)
    except (RuntimeError, ValueError) as exc:
        return SinusoidFit(amp0, f0, ph0, float(coef[2]), _rms(y, t, amp0, f0, ph0, coef[2]), converged=False,
                           message=f"least squares did not converge: {exc}")
    f, a, b, c = (float(x) for x in popt)
    if f < 0:
        f, b = -f, -b
    amp, phase = _polar(a, b)
    errs = {"frequency": _sd(pcov, 0), "offset": _sd(pcov, 3)}
    fit = SinusoidFit(amp, f, phase, c, _rms(y, t, amp, f, phase, c), errs)
    if not np.all(np.isfinite(pcov)):
        fit.message = "covariance unavailable (exact fit or singular Jacobian)"
    if amp <= 1e-9 * scale:
        fit.converged, fit.message = False, "degenerate: amplitude is zero"
    elif span * f < 1.0:
        fit.converged, fit.message = False, "data span less than one period"
    return fit


def _covariance(aw, chi2, n, absolute):
    inv = np.linalg.pinv(aw.T @ aw)
    if absolute:
        return inv
    dof = max(n - aw.shape[1], 1)
    return inv * chi2 / dof


def _sd(cov, k):
    v = float(cov[k, k]) if np.all(np.isfinite(cov)) else math.nan
    return math.sqrt(v) if v >= 0 else math.nan


def _rms(y, t, amp, f, phase, c):
    return float(np.sqrt(np.mean((y - (c + amp * np.cos(TWO_PI * f * t + phase))) ** 2)))


@dataclass
class LineFit:
    center: float
    center_error: float
    amplitude: float
    rabi: float
    offset: float
    converged: bool = True
    message: str = ""


def rabi_line(delta, center, amplitude, rabi, offset, pulse):
    """Transfer probability of a square pulse of length ``pulse`` (us), MHz units."""
    x = np.asarray(delta) - center
    gen = np.sqrt(rabi**2 + x**2)
    return offset + amplitude * (rabi**2 / gen**2) * np.sin(np.pi * gen * pulse) ** 2


def fit_rabi_line(delta, p, pulse: float, rabi_guess: float, sigma=None) -> LineFit:
    """Fit the symmetric square-pulse line shape and return its center."""
    delta = np.asarray(delta, dtype=float)
    p = np.asarray(p, dtype=float)
    sig = _weights(p, sigma)
    k = int(np.argmax(p))
    amp0 = float(p[k] - p.min())
    if amp0 <= 1e-9:
        return LineFit(math.nan, math.nan, 0.0, rabi_guess, float(p.mean()), False, "degenerate: no resonance in scan")

    def model(d, c, a, r, o):
        return rabi_line(d, c, a, r, o, pulse)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(model, delta, p, p0=[delta[k], amp0, rabi_guess, float(p.min())], sigma=sig,
                                   absolute_sigma=sig is not None, maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        return LineFit(float(delta[k]), math.nan, amp0, rabi_guess, float(p.min()), False, f"line fit failed: {exc}")
    c, a, r, o = (float(x) for x in popt)
    fit = LineFit(c, _sd(pcov, 0), a, abs(r), o)
    if not delta.min() <= c <= delta.max():
        fit.converged, fit.message = False, "fitted center outside scan range"
    return fit
