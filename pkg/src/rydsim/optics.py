"""Addressing-beam physics: Rabi frequency, Gaussian cross-talk, light shifts,
scattering and Raman leakage.

Frequencies are ordinary frequencies in MHz, lengths in um, powers in mW.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .errors import DomainError
from .spinmodel import AtomArray

#: Calculated addressing Rabi frequency at the reference power.
OMEGA_REF_MHZ = 158.0
POWER_REF_MW = 30.0
#: Lifetime of the intermediate 6P1/2 level.
TAU_6P_NS = 121.0


class RegimeWarning(UserWarning):
    """The perturbative light-shift formula is used outside |D| >> W."""


@dataclass(frozen=True)
class BeamSpec:
    power: float
    waist: float = 3.4
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    detuning: float = 1300.0
    omega_ref: float = OMEGA_REF_MHZ
    power_ref: float = POWER_REF_MW

    def __post_init__(self):
        if self.waist <= 0:
            raise DomainError("beam waist must be positive")
        if self.power < 0:
            raise DomainError("beam power must be non-negative")
        axis = np.asarray(self.axis, dtype=float)
        if axis.shape != (3,) or not np.linalg.norm(axis) > 0:
            raise DomainError("beam axis must be a non-zero 3-vector")
        object.__setattr__(self, "center", tuple(float(x) for x in self.center))
        object.__setattr__(self, "axis", tuple(float(x) for x in axis))

    def with_shift(self, shift: float) -> "BeamSpec":
        """Same beam with the detuning chosen so the peak perturbative shift is ``shift``."""
        if shift == 0:
            return replace(self, power=0.0)
        return replace(self, detuning=detuning_for_shift(addressing_rabi(self), shift))


@dataclass(frozen=True, eq=False)
class AddressingEffect:
    light_shifts: np.ndarray
    scattering: np.ndarray
    raman: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AddressingEffect":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))


def addressing_rabi(beam: BeamSpec) -> float:
    """Addressing Rabi frequency in MHz, scaling as sqrt(P)."""
    if beam.power < 0:
        raise DomainError("negative beam power")
    return beam.omega_ref * math.sqrt(beam.power / beam.power_ref)


def intensity_fraction(beam: BeamSpec, pos) -> float:
    """Gaussian intensity at ``pos`` relative to the beam axis peak."""
    axis = np.asarray(beam.axis) / np.linalg.norm(beam.axis)
    d = np.asarray(pos, dtype=float) - np.asarray(beam.center)
    r_perp = d - np.dot(d, axis) * axis
    return float(np.exp(-2.0 * np.dot(r_perp, r_perp) / beam.waist**2))


def light_shift(omega: float, delta: float, mode: str = "perturbative") -> float:
    """Light shift of ``up`` in MHz.

    ``perturbative`` is W^2/(4D); ``dressed`` is the exact two-level AC Stark
    shift sign(D)(sqrt(D^2 + W^2) - |D|)/2.
    """
    if mode == "perturbative":
        if delta == 0:
            raise DomainError("perturbative light shift needs a non-zero detuning")
        if abs(delta) < 2.0 * abs(omega):
            warnings.warn(
                f"|detuning| {abs(delta):g} MHz < 2 x Rabi {abs(omega):g} MHz; perturbative shift unreliable",
                RegimeWarning,
                stacklevel=2,
            )
        return omega**2 / (4.0 * delta)
    if mode == "dressed":
        if omega == 0:
            return 0.0
        return math.copysign(1.0, delta) * (math.hypot(delta, omega) - abs(delta)) / 2.0
    raise DomainError(f"unknown light-shift mode {mode!r}")


def detuning_for_shift(omega: float, shift: float) -> float:
    """Invert the perturbative formula: detuning giving peak shift ``shift``."""
    if shift == 0:
        raise DomainError("zero shift needs infinite detuning")
    return omega**2 / (4.0 * shift)


def scattering_lifetime(omega: float, delta: float, tau_6p: float = TAU_6P_NS) -> tuple[float, float]:
    """Lifetime (us) of the addressed ``up`` level and the rate 1/tau (1/us).

    The rate is the excited fraction (W/2D)^2 over tau_6P, so
    tau = 4 (D/W)^2 tau_6P.
    """
    if delta == 0:
        raise DomainError("scattering lifetime needs a non-zero detuning")
    if omega == 0:
        return math.inf, 0.0
    tau = 4.0 * (delta / omega) ** 2 * (tau_6p * 1e-3)
    return tau, 1.0 / tau


def raman_coupling(omega: float, delta: float) -> float:
    """Raman Rabi frequency up <-> zero in MHz, W^2 / (2 sqrt(3) D)."""
    if delta == 0:
        raise DomainError("Raman coupling needs a non-zero detuning")
    return omega**2 / (2.0 * math.sqrt(3.0) * delta)


def addressing_effect(
    beams: Iterable[BeamSpec],
    array: AtomArray,
    mode: str = "perturbative",
    tau_6p: float = TAU_6P_NS,
) -> AddressingEffect:
    """Per-atom light shift, scattering rate and Raman coupling.

    Peak values are scaled by the local intensity fraction, and contributions
    from several beams add.
    """
    n = array.n_atoms
    shifts, rates, ramans = np.zeros(n), np.zeros(n), np.zeros(n)
    for beam in beams:
        omega = addressing_rabi(beam)
        if omega == 0:
            continue
        peak_shift = light_shift(omega, beam.detuning, mode)
        _, peak_rate = scattering_lifetime(omega, beam.detuning, tau_6p)
        peak_raman = raman_coupling(omega, beam.detuning)
        for i, pos in enumerate(array.positions):
            f = intensity_fraction(beam, pos)
            shifts[i] += peak_shift * f
            rates[i] += peak_rate * f
            ramans[i] += peak_raman * f
    return AddressingEffect(shifts, rates, ramans)
