"""Oracle-equivalence and invariant checks, run by ``rydsim check``.

Each check returns a non-negative deviation that must not exceed
``TOLERANCES[name]``. Tests inject failures by tightening an entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources
from typing import Callable, Iterator

import numpy as np

from . import seqfile
from .evolve import Schedule, Segment, evolve, integrate_reference
from .optics import (
    BeamSpec,
    addressing_effect,
    addressing_rabi,
    intensity_fraction,
    light_shift,
    raman_coupling,
    scattering_lifetime,
)
from .protocols import exchange_schedule, fit_sinusoid, rabi_pair
from .protocols.experiments import control_spec, spectroscopy_pulse
from .readout import derive_rng, detection_probabilities, prepare_with_inefficiency
from .runner import _preparation, build_array, build_beam, build_imperfections, resolve_windows
from .spinmodel import (
    AtomArray,
    HamiltonianSpec,
    LevelScheme,
    basis_state,
    build_hamiltonian,
    drive_hamiltonian,
    excitation_number,
    pair_coupling,
)

BUNDLED = ("fig1c", "fig2b", "fig2c", "fig3b", "fig3def")
MODULES = ("spinmodel", "optics", "evolve", "readout", "protocols", "seqfile")

TOLERANCES = {
    "spinmodel.hermitian": 1e-12,
    "spinmodel.pair_spectrum": 1e-12,
    "spinmodel.dark_state_decoupled": 0.0,
    "spinmodel.excitation_conserved": 1e-12,
    "optics.operating_point": 1e-12,
    "optics.crosstalk_ratio": 1e-15,
    "optics.dressed_correction_bound": 0.0,
    "optics.lifetime_relation": 1e-15,
    "evolve.propagator_vs_rk4": 1e-8,
    "evolve.norm_conservation": 1e-12,
    "evolve.loss_attribution": 1e-10,
    "readout.mixture_normalization": 1e-12,
    "readout.eta_contrast": 1e-12,
    "readout.seed_stream_order": 0.0,
    "protocols.exchange_frequency": 1e-4,
    "protocols.sqrt2_enhancement": 1e-3,
    "protocols.sinusoid_recovery": 1e-9,
    "seqfile.bundled_roundtrip": 0.0,
    "seqfile.echo_idempotent": 0.0,
}


@dataclass
class CheckResult:
    name: str
    deviation: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.deviation <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name} deviation={self.deviation:.3g} tolerance={self.tolerance:.3g}"
        return f"{text} ({self.detail})" if self.detail else text


_REGISTRY: dict[str, Callable[[], tuple[float, str]]] = {}


def _check(name: str):
    def wrap(fn):
        _REGISTRY[name] = fn
        return fn

    return wrap


def bundled_config(name: str) -> seqfile.ExperimentConfig:
    return seqfile.parse((resources.files("rydsim") / "configs" / f"{name}.json").read_text(encoding="utf-8"))


# ---------------------------------------------------------------- spinmodel


def _two_atoms(u=0.4):
    return AtomArray.pair(25.0, coupling=u)


@_check("spinmodel.hermitian")
def _hermitian():
    scheme = LevelScheme.build(zero=True, ground=True)
    spec = HamiltonianSpec.for_array(_two_atoms(), mw_rabi=1.3, mw_detuning=0.2, mw_phase=0.7,
                                     light_shifts=[4.8, 0.04], raman=[5.5, 0.05])
    h = build_hamiltonian(scheme, spec)
    return float(np.max(np.abs(h - h.conj().T))), "all terms, loss off"


@_check("spinmodel.pair_spectrum")
def _pair_spectrum():
    h = build_hamiltonian(LevelScheme.build(), HamiltonianSpec.for_array(_two_atoms(0.4)))
    ev = np.sort(np.linalg.eigvalsh(h)) / (2 * np.pi)
    return float(np.max(np.abs(ev - [-0.4, 0.0, 0.0, 0.4]))), "eigenvalues vs (-U, 0, 0, U)"


@_check("spinmodel.dark_state_decoupled")
def _dark():
    scheme = LevelScheme.build()
    hd = drive_hamiltonian(scheme, HamiltonianSpec.for_array(_two_atoms(), mw_rabi=1.0))
    col = hd @ basis_state(scheme, "uu")
    ud, du = (int(np.argmax(basis_state(scheme, x))) for x in ("ud", "du"))
    return float(abs(col[ud] - col[du])) / math.sqrt(2), "<-|H_drive|uu>"


@_check("spinmodel.excitation_conserved")
def _conserved():
    scheme = LevelScheme.build()
    arr = AtomArray(np.array([[0, 0, 0], [0, 0, 12.0], [0, 9.0, 0]], dtype=float))
    h = build_hamiltonian(scheme, HamiltonianSpec.for_array(arr, light_shifts=[1.0, 0.0, 0.3]))
    n = excitation_number(scheme, 3)
    return float(np.max(np.abs(h @ n - n @ h))), "[H, N_up] without drive"


# ---------------------------------------------------------------- optics


@_check("optics.operating_point")
def _operating_point():
    # hand-evaluated closed forms at P = 30 mW, Delta = 1300 MHz
    omega, delta = 158.0, 1300.0
    expect = [
        omega**2 / (4 * delta),
        (math.sqrt(delta**2 + omega**2) - delta) / 2,
        (2 * delta / omega) ** 2 * 0.121,
        omega**2 / (2 * math.sqrt(3) * delta),
    ]
    beam = BeamSpec(30.0)
    om = addressing_rabi(beam)
    got = [light_shift(om, delta), light_shift(om, delta, "dressed"), scattering_lifetime(om, delta)[0],
           raman_coupling(om, delta)]
    return max(abs(a - b) / abs(b) for a, b in zip(got, expect)), "shift, dressed, lifetime, Raman"


@_check("optics.crosstalk_ratio")
def _crosstalk():
    f = intensity_fraction(BeamSpec(30.0, waist=3.4), (0.0, 5.2, 0.0))
    return abs(f - math.exp(-2 * 5.2**2 / 3.4**2)), f"fraction at 5.2 um = {f:.6g}"


@_check("optics.dressed_correction_bound")
def _dressed_bound():
    omega = 158.0
    worst = -math.inf
    for d in np.concatenate([-np.geomspace(800, 5000, 25), np.geomspace(800, 5000, 25)]):
        p, dr = light_shift(omega, d), light_shift(omega, d, "dressed")
        worst = max(worst, abs(dr - p) / abs(p) - (omega / (2 * d)) ** 2)
    return max(worst, 0.0), "relative dressed correction minus (Omega/2Delta)^2"


@_check("optics.lifetime_relation")
def _lifetime():
    worst = 0.0
    for omega, delta in [(158.0, 1300.0), (50.0, -800.0), (300.0, 4000.0)]:
        tau, rate = scattering_lifetime(omega, delta)
        ref = 4 * (delta / omega) ** 2 * 0.121
        worst = max(worst, abs(tau - ref) / ref, abs(rate * tau - 1.0))
    return worst, "tau = 4 (Delta/Omega)^2 tau_6P"


# ---------------------------------------------------------------- evolve


def scenarios() -> Iterator[tuple[str, np.ndarray, Schedule]]:
    """Representative schedules from each bundled configuration."""
    for name in BUNDLED:
        cfg = bundled_config(name)
        imp = build_imperfections(cfg)
        array = build_array(cfg)
        beam = build_beam(cfg)
        scheme = imp.scheme()
        p = cfg.protocol
        g = seqfile.grid_values
        if p.name == "lightshift_spectroscopy":
            for d_addr in (-800.0, 800.0, 5000.0):
                eff = addressing_effect([replace(beam, detuning=d_addr)], array, p.shift_mode, imp.tau_6p)
                spec = HamiltonianSpec.for_array(array, mw_rabi=cfg.microwave.rabi_mhz,
                                                 mw_detuning=float(eff.light_shifts[0]), light_shifts=eff.light_shifts)
                yield f"{name}[{d_addr:g}]", basis_state(scheme, "u"), Schedule(scheme, [Segment(p.pulse_us, spec)])
        elif p.name == "spectroscopy_map":
            pulse = p.pulse_us or spectroscopy_pulse(cfg.microwave.rabi_mhz)
            shifts, dets = g(p.shifts_mhz), g(p.mw_detunings_mhz)
            for s in (shifts[0], shifts[-1]):
                for d in (dets[0], -0.4, 0.4):
                    spec = control_spec(array, imp, beam, float(s), cfg.microwave.rabi_mhz, float(d))
                    rec = np.linspace(0, pulse, 5)
                    sched = Schedule(scheme, [Segment(pulse, spec)], rec)
                    yield f"{name}[{s:g},{d:g}]", basis_state(scheme, "uu"), sched
        elif p.name == "rabi_pair":
            t = g(p.durations_us)
            spec = control_spec(array, imp, None, 0.0, cfg.microwave.rabi_mhz, -pair_coupling(array, 0, 1))
            yield name, basis_state(scheme, "uu"), Schedule(scheme, [Segment(float(t.max()), spec)], t)
        else:
            u = pair_coupling(array, 0, 1)
            prep = _preparation(p.preparation)
            for trace in p.traces:
                windows = resolve_windows(trace, u, p.freeze_shift_mhz)
                sched = exchange_schedule(array, beam, prep, windows, g(p.times_us), p.freeze_shift_mhz, imp)
                yield f"{name}[{trace.label}]", basis_state(scheme, "uu"), sched


@_check("evolve.propagator_vs_rk4")
def _rk4():
    worst, where = 0.0, ""
    for label, psi, sched in scenarios():
        exact = np.abs(evolve(psi, sched).states) ** 2
        ref = np.abs(integrate_reference(psi, sched, step=1e-4).states) ** 2
        dev = float(np.max(np.abs(exact - ref)))
        if dev >= worst:
            worst, where = dev, label
    return worst, f"worst scenario {where}"


@_check("evolve.norm_conservation")
def _norm():
    worst = 0.0
    for _, psi, sched in scenarios():
        worst = max(worst, float(np.max(np.abs(evolve(psi, sched).norms() - 1.0))))
    return worst, "Hermitian schedules"


@_check("evolve.loss_attribution")
def _loss():
    scheme = LevelScheme.build()
    spec = HamiltonianSpec.for_array(_two_atoms(), mw_rabi=0.5, light_shifts=[4.8, 0.0], scattering=[0.5, 0.05])
    ev = evolve(basis_state(scheme, "ud"), Schedule(scheme, [Segment(2.0, spec)], np.linspace(0, 2, 9)))
    return float(np.max(np.abs(ev.atom_loss.sum(axis=1) - (1.0 - ev.norms())))), "sum of per-atom loss = norm deficit"


# ---------------------------------------------------------------- readout


@_check("readout.mixture_normalization")
def _mixture():
    scheme = LevelScheme.build(zero=True, ground=True)
    spec = HamiltonianSpec.for_array(_two_atoms(), mw_rabi=1.0, light_shifts=[4.8, 0.0], scattering=[0.3, 0.0],
                                     raman=[5.5, 0.0])
    sched = Schedule(scheme, [Segment(1.0, spec)], np.linspace(0, 1, 6))
    mix = [(b.weight, evolve(b.state, sched)) for b in prepare_with_inefficiency("ud", scheme, 0.88)]
    p = detection_probabilities(mix, scheme, 2)
    return float(np.max(np.abs(p.sum(axis=1) - 1.0))), "pattern probabilities sum to one"


@_check("readout.eta_contrast")
def _eta():
    scheme = LevelScheme.build(ground=True)
    worst = 0.0
    for eta in (0.5, 0.88, 1.0):
        sched = Schedule(scheme, [Segment(0.0, HamiltonianSpec(2))])
        mix = [(b.weight, evolve(b.state, sched)) for b in prepare_with_inefficiency("dd", scheme, eta)]
        p = detection_probabilities(mix, scheme, 2)[0]
        worst = max(worst, abs(p[3] - eta**2), abs(p[0] - (1 - eta) ** 2))
    return worst, "P(dd) = eta^2 for a dd recipe"


@_check("readout.seed_stream_order")
def _streams():
    a = [derive_rng(7, i, j).random(4) for i in range(3) for j in range(3)]
    b = [derive_rng(7, i, j).random(4) for i in reversed(range(3)) for j in reversed(range(3))][::-1]
    return float(max(np.max(np.abs(x - y)) for x, y in zip(a, b))), "streams independent of visit order"


# ---------------------------------------------------------------- protocols


@_check("protocols.exchange_frequency")
def _exchange():
    cfg = bundled_config("fig3b")
    cfg = cfg.model_copy(update={"shots": 0})
    from .runner import run_config

    fit = run_config(cfg).summary["fits"]["free"]["free"]
    return abs(fit["frequency"] - 0.8) / 0.8, f"fitted {fit['frequency']:.10g} MHz"


@_check("protocols.sqrt2_enhancement")
def _sqrt2():
    res = rabi_pair(AtomArray.pair(12.2, coupling=4.09), 0.2, np.linspace(0, 12, 241))
    return abs(res.summary["frequency_ratio"] - math.sqrt(2)), f"ratio {res.summary['frequency_ratio']:.6f}"


@_check("protocols.sinusoid_recovery")
def _sinusoid():
    t = np.linspace(0, 5, 101)
    y = 0.5 + 0.3 * np.cos(2 * np.pi * 0.8 * t + 0.4)
    f = fit_sinusoid(t, y)
    return max(abs(f.frequency - 0.8), abs(f.amplitude - 0.3), abs(f.phase - 0.4), abs(f.offset - 0.5)), "noiseless"


# ---------------------------------------------------------------- seqfile


@_check("seqfile.bundled_roundtrip")
def _roundtrip():
    bad = [n for n in BUNDLED if seqfile.parse(seqfile.echo(bundled_config(n))) != bundled_config(n)]
    return float(len(bad)), ", ".join(bad) or "all bundled configs"


@_check("seqfile.echo_idempotent")
def _idempotent():
    bad = 0
    for n in BUNDLED:
        once = seqfile.echo(bundled_config(n))
        bad += seqfile.echo(seqfile.parse(once)) != once
    return float(bad), "echo(parse(echo(c))) == echo(c)"


# ---------------------------------------------------------------- driver


def names(scope: str = "all") -> list[str]:
    if scope == "all":
        return list(_REGISTRY)
    if scope not in MODULES:
        raise KeyError(f"unknown scope {scope!r}; choose from all, {', '.join(MODULES)}")
    return [n for n in _REGISTRY if n.startswith(scope + ".")]


def run_checks(scope: str = "all") -> list[CheckResult]:
    out = []
    for name in names(scope):
        try:
            dev, detail = _REGISTRY[name]()
        except Exception as exc:  # a crashing check is a failing check
            dev, detail = math.inf, f"{type(exc).__name__}: {exc}"
        if not math.isfinite(dev):
            dev = math.inf
        out.append(CheckResult(name, float(dev), TOLERANCES[name], detail))
    return out
