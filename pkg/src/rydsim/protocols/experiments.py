"""Canned experiments: light-shift spectroscopy, two-atom microwave
spectroscopy, collective Rabi oscillations, and frozen spin exchange.

Every protocol returns an :class:`ExperimentResult` whose ``columns`` are the
CSV table (in order) and whose ``summary`` holds fitted quantities.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..errors import DomainError, FitError
from ..evolve import Evolution, Ramp, Schedule, Segment, evolve, evolve_jumps, populations
from ..optics import BeamSpec, addressing_effect
from ..readout import (
    derive_rng,
    detection_patterns,
    detection_probabilities,
    prepare_with_inefficiency,
    sample_shots,
)
from ..spinmodel import AtomArray, HamiltonianSpec, LevelScheme, pair_coupling
from .fitting import fit_rabi_line, fit_sinusoid, wrap_phase

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Imperfections:
    """Switchable error model shared by all protocols."""

    eta: float = 1.0
    scattering: str = "off"  # off | loss | jumps
    raman: bool = False
    zeeman_split: float = 15.0
    zero_shift: float = 0.0
    tau_6p: float = 121.0
    light_shift_mode: str = "perturbative"
    scattered_outcome: str = "recaptured"
    readout_flip: float = 0.0
    rise_time: float = 0.0
    jump_dt: float = 0.002
    with_zero: bool = False  # keep the level even when Raman coupling is off
    with_ground: bool = False

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise DomainError(f"eta must lie in [0, 1], got {self.eta}")
        if self.scattering not in ("off", "loss", "jumps"):
            raise DomainError(f"unknown scattering mode {self.scattering!r}")

    def scheme(self) -> LevelScheme:
        return LevelScheme.build(
            zero=self.raman or self.with_zero,
            ground=self.with_ground or self.eta < 1.0 or self.scattering == "jumps",
        )


@dataclass
class ExperimentResult:
    protocol: str
    columns: dict[str, np.ndarray]
    summary: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError(f"column lengths differ: {lengths}")


def pmap(fn: Callable, items: Sequence, threads: int | None = None) -> list:
    """Ordered map over independent grid points, optionally threaded."""
    threads = threads or int(os.environ.get("RYDSIM_THREADS", "1") or 1)
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- building blocks


def control_spec(
    array: AtomArray,
    imp: Imperfections,
    beam: BeamSpec | None = None,
    shift: float = 0.0,
    mw_rabi: float = 0.0,
    mw_detuning: float = 0.0,
    mw_phase: float = 0.0,
    shift_mode: str | None = None,
) -> HamiltonianSpec:
    """Hamiltonian epoch with the addressing beam tuned to peak shift ``shift``.

    ``shift = 0`` means the beam is off. With ``beam=None`` the shift is put
    on atom 0 alone with no scattering or Raman side effects.
    """
    n = array.n_atoms
    if beam is None:
        lights = np.zeros(n)
        lights[0] = shift
        effect_rates, effect_raman = np.zeros(n), np.zeros(n)
    elif shift == 0:
        lights, effect_rates, effect_raman = np.zeros(n), np.zeros(n), np.zeros(n)
    else:
        eff = addressing_effect([beam.with_shift(shift)], array, shift_mode or imp.light_shift_mode, imp.tau_6p)
        lights, effect_rates, effect_raman = eff.light_shifts, eff.scattering, eff.raman
    return HamiltonianSpec.for_array(
        array,
        mw_rabi=mw_rabi,
        mw_detuning=mw_detuning,
        mw_phase=mw_phase,
        light_shifts=lights,
        scattering=effect_rates if imp.scattering != "off" else 0.0,
        raman=effect_raman if imp.raman else 0.0,
        zeeman_split=imp.zeeman_split,
        zero_shift=imp.zero_shift,
    )


def addressed_segments(duration: float, spec: HamiltonianSpec, imp: Imperfections, label: str) -> list[Segment]:
    """An addressing pulse, with linear rise/fall edges when ``imp.rise_time > 0``."""
    rise = imp.rise_time
    if rise <= 0 or not np.any(spec.light_shifts):
        return [Segment(duration, spec, label=label)]
    if 2 * rise > duration:
        raise DomainError(f"addressing pulse of {duration} us is shorter than two rise times")
    return [
        Segment(rise, spec, Ramp(10, 0.0, 1.0), label + ":rise"),
        Segment(duration - 2 * rise, spec, label=label),
        Segment(rise, spec, Ramp(10, 1.0, 0.0), label + ":fall"),
    ]


def measure(
    recipe: str,
    schedule: Schedule,
    imp: Imperfections,
    shots: int,
    seed: int,
    key: tuple[int, ...],
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Exact pattern probabilities and, when ``shots > 0``, sampled estimates.

    Returns ``(probabilities, frequencies, stderr)``, each of shape
    ``(n_record_times, 2**n_atoms)``. Record time ``k`` uses the shot stream
    ``derive_rng(seed, *key, k)``.
    """
    scheme = schedule.scheme
    n = schedule.n_atoms
    branches = prepare_with_inefficiency(recipe, scheme, imp.eta)
    patterns = detection_patterns(n)
    n_rec = schedule.record_times.size

    if imp.scattering == "jumps":
        n_traj = shots if shots > 0 else 200
        per_traj = []
        weights = np.array([b.weight for b in branches])
        traj_rng = derive_rng(seed, 1, *key)
        for k in range(n_traj):
            b = branches[int(traj_rng.choice(len(branches), p=weights / weights.sum()))]
            ev = evolve_jumps(b.state, schedule, derive_rng(seed, 2, *key, k), imp.jump_dt)
            per_traj.append(detection_probabilities([(1.0, ev)], scheme, n, imp.scattered_outcome, imp.readout_flip))
        stack = np.array(per_traj)
        probs = stack.mean(axis=0)
        if shots <= 0:
            return probs, None, None
        freqs = np.zeros_like(probs)
        for r in range(n_rec):
            rng = derive_rng(seed, 0, *key, r)
            draws = [rng.choice(len(patterns), p=_normalized(stack[k, r])) for k in range(n_traj)]
            freqs[r] = np.bincount(draws, minlength=len(patterns)) / n_traj
        return probs, freqs, np.sqrt(freqs * (1 - freqs) / n_traj)

    evolved = [(b.weight, evolve(b.state, schedule)) for b in branches]
    probs = detection_probabilities(evolved, scheme, n, imp.scattered_outcome, imp.readout_flip)
    if shots <= 0:
        return probs, None, None
    freqs = np.zeros_like(probs)
    errs = np.zeros_like(probs)
    for r in range(n_rec):
        ds = sample_shots(_normalized(probs[r]), shots, derive_rng(seed, 0, *key, r), patterns)
        freqs[r] = ds.frequencies
        errs[r] = ds.stderr
    return probs, freqs, errs


def _normalized(p):
    p = np.clip(np.asarray(p, dtype=float), 0.0, None)
    return p / p.sum()


def _observed(probs, freqs, errs):
    if freqs is None:
        return probs, np.zeros_like(probs)
    return freqs, errs


def _fit_sigma(errs, shots):
    """Shot-noise weights for fits, floored so that 0/1 frequencies keep weight."""
    if shots <= 0:
        return None
    return np.sqrt(errs**2 + 0.25 / shots**2)


# ---------------------------------------------------------------- light-shift spectroscopy


def lightshift_spectroscopy(
    beam: BeamSpec,
    addr_detunings: Sequence[float],
    mw_detunings: Sequence[float],
    pulse: float,
    mw_rabi: float,
    imp: Imperfections = Imperfections(),
    shots: int = 0,
    seed: int = 0,
    threads: int | None = None,
    shift_mode: str = "dressed",
) -> ExperimentResult:
    """Microwave spectroscopy of one addressed atom for each addressing detuning.

    The atom starts in ``up``; the line is the lost (``down``) probability
    versus microwave detuning, and its fitted center is the light shift.
    """
    from ..optics import addressing_rabi, light_shift

    array = AtomArray(np.array([beam.center]))
    mw = np.asarray(mw_detunings, dtype=float)
    omega = addressing_rabi(beam)
    scheme = imp.scheme()

    def point(args):
        idx, d_addr = args
        b = replace(beam, detuning=float(d_addr))
        eff = addressing_effect([b] if omega else [], array, shift_mode, imp.tau_6p)
        line, line_err = np.zeros(mw.size), np.zeros(mw.size)
        for j, dmw in enumerate(mw):
            spec = HamiltonianSpec.for_array(
                array,
                mw_rabi=mw_rabi,
                mw_detuning=dmw,
                light_shifts=eff.light_shifts,
                scattering=eff.scattering if imp.scattering != "off" else 0.0,
                raman=eff.raman if imp.raman else 0.0,
                zeeman_split=imp.zeeman_split,
                zero_shift=imp.zero_shift,
            )
            sched = Schedule(scheme, [Segment(pulse, spec)])
            probs, freqs, errs = measure("u", sched, imp, shots, seed, (idx, j))
            obs, err = _observed(probs, freqs, errs)
            line[j], line_err[j] = obs[0, 1], err[0, 1]
        fit = fit_rabi_line(mw, line, pulse, mw_rabi, _fit_sigma(line_err, shots))
        return fit, line

    results = pmap(point, list(enumerate(addr_detunings)), threads)
    d = np.asarray(addr_detunings, dtype=float)
    pert = np.array([light_shift(omega, x, "perturbative") if omega else 0.0 for x in d])
    dressed = np.array([light_shift(omega, x, "dressed") for x in d])
    centers = np.array([f.center for f, _ in results])
    return ExperimentResult(
        "lightshift_spectroscopy",
        {
            "delta_addr_mhz": d,
            "center_mhz": centers,
            "center_stderr_mhz": np.array([f.center_error for f, _ in results]),
            "perturbative_mhz": pert,
            "dressed_mhz": dressed,
            "fit_ok": np.array([int(f.converged) for f, _ in results]),
        },
        {
            "omega_addr_mhz": omega,
            "lines": {"mw_detuning_mhz": mw.tolist(), "p_lost": [line.tolist() for _, line in results]},
            "fit_messages": [f.message for f, _ in results],
        },
    )


# ---------------------------------------------------------------- pair spectroscopy


def spectroscopy_pulse(mw_rabi: float) -> float:
    """Pulse length pi/(sqrt(2) W) flipping |uu> into the bright state."""
    return 1.0 / (2.0 * math.sqrt(2.0) * mw_rabi)


def spectroscopy_map(
    array: AtomArray,
    beam: BeamSpec | None,
    shifts: Sequence[float],
    mw_detunings: Sequence[float],
    mw_rabi: float,
    pulse: float | None = None,
    imp: Imperfections = Imperfections(),
    shots: int = 0,
    seed: int = 0,
    threads: int | None = None,
) -> ExperimentResult:
    """Final ``uu`` probability over a (light shift, microwave detuning) grid,
    starting from both atoms in ``up``."""
    pulse = spectroscopy_pulse(mw_rabi) if pulse is None else pulse
    scheme = imp.scheme()
    grid = [(i, j, float(s), float(d)) for i, s in enumerate(shifts) for j, d in enumerate(mw_detunings)]

    def point(args):
        i, j, s, d = args
        spec = control_spec(array, imp, beam, s, mw_rabi, d)
        sched = Schedule(scheme, [Segment(pulse, spec)])
        probs, freqs, errs = measure("u" * array.n_atoms, sched, imp, shots, seed, (i, j))
        obs, err = _observed(probs, freqs, errs)
        return probs[0, 0], obs[0, 0], err[0, 0]

    out = pmap(point, grid, threads)
    return ExperimentResult(
        "spectroscopy_map",
        {
            "delta_mw_mhz": np.array([g[3] for g in grid]),
            "delta_omega0_mhz": np.array([g[2] for g in grid]),
            "p_uu": np.array([o[1] for o in out]),
            "p_uu_stderr": np.array([o[2] for o in out]),
        },
        {"pulse_us": pulse, "p_uu_exact": [o[0] for o in out]},
    )


# ---------------------------------------------------------------- pair Rabi oscillations


def rabi_pair(
    array: AtomArray,
    mw_rabi: float,
    durations: Sequence[float],
    pair_detuning: float | None = None,
    single_detuning: float = 0.0,
    imp: Imperfections = Imperfections(),
    shots: int = 0,
    seed: int = 0,
) -> ExperimentResult:
    """Single-atom and pair Rabi traces and their fitted frequency ratio.

    The pair is driven at ``pair_detuning`` (default ``-U/h``, the
    ``uu <-> +`` resonance); the single atom at ``single_detuning``.
    """
    if array.n_atoms != 2:
        raise DomainError("rabi_pair needs exactly two atoms")
    u = pair_coupling(array, 0, 1)
    pair_detuning = -u if pair_detuning is None else pair_detuning
    t = np.asarray(durations, dtype=float)
    scheme = imp.scheme()
    lone = AtomArray(array.positions[:1], array.c3)

    single_spec = control_spec(lone, imp, None, 0.0, mw_rabi, single_detuning)
    pair_spec = control_spec(array, imp, None, 0.0, mw_rabi, pair_detuning)
    sp, sf, se = measure("u", Schedule(scheme, [Segment(t.max(), single_spec)], t), imp, shots, seed, (0,))
    pp, pf, pe = measure("uu", Schedule(scheme, [Segment(t.max(), pair_spec)], t), imp, shots, seed, (1,))
    s_obs, s_err = _observed(sp, sf, se)
    p_obs, p_err = _observed(pp, pf, pe)

    single_fit = fit_sinusoid(t, s_obs[:, 0], sigma=_fit_sigma(s_err[:, 0], shots))
    pair_fit = fit_sinusoid(t, p_obs[:, 0], sigma=_fit_sigma(p_err[:, 0], shots))
    for name, fit in (("single", single_fit), ("pair", pair_fit)):
        if not fit.converged:
            raise FitError(f"{name} Rabi fit failed: {fit.message}")
    ratio = pair_fit.frequency / single_fit.frequency
    return ExperimentResult(
        "rabi_pair",
        {
            "time_us": t,
            "p_single_u": s_obs[:, 0],
            "p_single_u_stderr": s_err[:, 0],
            "p_pair_uu": p_obs[:, 0],
            "p_pair_uu_stderr": p_err[:, 0],
            "p_pair_dd": p_obs[:, 3],
            "p_pair_dd_stderr": p_err[:, 3],
        },
        {
            "coupling_mhz": u,
            "single_fit": single_fit.as_dict(),
            "pair_fit": pair_fit.as_dict(),
            "frequency_ratio": ratio,
            "max_p_dd_exact": float(pp[:, 3].max()),
        },
    )


# ---------------------------------------------------------------- spin exchange and freezing


@dataclass(frozen=True)
class FreezeWindow:
    """Addressing pulse applied ``start`` us after preparation for ``duration`` us."""

    start: float
    duration: float


@dataclass(frozen=True)
class Preparation:
    """Addressed microwave pi pulse turning ``uu`` into ``ud``."""

    shift: float = 4.8
    mw_rabi: float = 1.3
    ideal: bool = False

    @property
    def duration(self) -> float:
        return 0.0 if self.ideal else 1.0 / (2.0 * self.mw_rabi)


def imprint_window(coupling: float, shift: float, phase: float) -> FreezeWindow:
    """Freeze window that imprints relative phase ``phase`` on the exchange state.

    The target is the state obtained by applying ``|ud> -> e^{-i phase}|ud>``
    to the quarter-period superposition ``(|ud> - i|du>)/sqrt(2)``. Because the
    exchange coupling keeps acting while atom 0 is shifted, the addressed
    evolution is a rotation of the {ud, du} Bloch vector about the tilted
    axis (2U, 0, shift) rather than about z. The start time is moved off the
    quarter period so that the target lies on that rotation's orbit, and the
    duration is the rotation closest to the naive ``phase / (2 pi shift)``.
    """
    if shift == 0:
        raise DomainError("freezing needs a non-zero light shift")
    u = coupling
    omega_f = TWO_PI * math.hypot(2 * u, shift)
    axis = np.array([2 * u, 0.0, shift]) / math.hypot(2 * u, shift)
    target = np.array([math.sin(phase), -math.cos(phase), 0.0])
    cos_alpha = math.sin(phase) * 2 * u / shift
    if abs(cos_alpha) > 1:
        raise DomainError("target phase unreachable for this coupling/shift ratio")
    alpha = math.acos(cos_alpha)
    start_vec = np.array([0.0, -math.sin(alpha), math.cos(alpha)])
    v = start_vec - (start_vec @ axis) * axis
    w = target - (target @ axis) * axis
    beta = math.atan2(axis @ np.cross(v, w), v @ w) % TWO_PI
    nominal = phase / (TWO_PI * shift)
    k = max(0, round((nominal * omega_f - beta) / TWO_PI))
    start = alpha / (4 * math.pi * u) if u else 0.0
    return FreezeWindow(start, (beta + TWO_PI * k) / omega_f)


def _check_windows(windows: Sequence[FreezeWindow], t_max: float):
    prev_end = 0.0
    for w in sorted(windows, key=lambda x: x.start):
        if w.start < 0 or w.duration < 0:
            raise DomainError("freeze windows must have non-negative start and duration")
        if w.start < prev_end - 1e-12:
            raise DomainError("freeze windows overlap")
        prev_end = w.start + w.duration
    if prev_end > t_max + 1e-12:
        raise DomainError("freeze window extends past the last record time")


def exchange_schedule(
    array: AtomArray,
    beam: BeamSpec | None,
    prep: Preparation,
    windows: Sequence[FreezeWindow],
    times: Sequence[float],
    freeze_shift: float,
    imp: Imperfections,
    include_prep_records: bool = False,
) -> Schedule:
    """Preparation, exchange and freeze windows as one schedule.

    Record times are measured from the end of preparation
    (``include_prep_records`` instead takes them from the very start)."""
    times = np.asarray(times, dtype=float)
    windows = sorted(windows, key=lambda w: w.start)
    span = float(times.max()) - (prep.duration if include_prep_records else 0.0)
    _check_windows(windows, max(span, 0.0))
    scheme = imp.scheme()
    segments = []
    if not prep.ideal:
        spec = control_spec(array, imp, beam, prep.shift, prep.mw_rabi, 0.0)
        segments += addressed_segments(prep.duration, spec, imp, "prepare")
    free = control_spec(array, imp)
    frozen = control_spec(array, imp, beam, freeze_shift)
    t = 0.0
    for w in windows:
        if w.start > t:
            segments.append(Segment(w.start - t, free, label="exchange"))
        if w.duration > 0:
            segments += addressed_segments(w.duration, frozen, imp, "freeze")
        t = w.start + w.duration
    if span > t:
        segments.append(Segment(span - t, free, label="exchange"))
    record = times if include_prep_records else times + prep.duration
    return Schedule(scheme, segments, record)


def exchange_time(times: np.ndarray, windows: Sequence[FreezeWindow]) -> np.ndarray:
    """Time spent un-frozen, i.e. ``T`` minus addressed time before ``T``."""
    times = np.asarray(times, dtype=float)
    out = times.copy()
    for w in windows:
        out -= np.clip(times - w.start, 0.0, w.duration)
    return out


@dataclass(frozen=True)
class ExchangeTrace:
    label: str
    windows: tuple[FreezeWindow, ...] = ()


def exchange_experiment(
    array: AtomArray,
    beam: BeamSpec | None,
    traces: Sequence[ExchangeTrace],
    times: Sequence[float],
    prep: Preparation = Preparation(),
    freeze_shift: float = 4.8,
    imp: Imperfections = Imperfections(),
    shots: int = 0,
    seed: int = 0,
    threads: int | None = None,
) -> ExperimentResult:
    """Spin-exchange traces after a simulated ``ud`` preparation, with freeze windows."""
    if array.n_atoms != 2:
        raise DomainError("exchange_experiment needs exactly two atoms")
    times = np.asarray(times, dtype=float)
    u = pair_coupling(array, 0, 1)
    recipe = "ud" if prep.ideal else "uu"

    def run(args):
        idx, trace = args
        sched = exchange_schedule(array, beam, prep, trace.windows, times, freeze_shift, imp)
        return measure(recipe, sched, imp, shots, seed, (idx,))

    outs = pmap(run, list(enumerate(traces)), threads)
    columns: dict[str, list] = {"trace": [], "time_us": []}
    for key in ("p_uu", "p_ud", "p_du", "p_dd", "p_ud_stderr"):
        columns[key] = []
    fits = {}
    for trace, (probs, freqs, errs) in zip(traces, outs):
        obs, err = _observed(probs, freqs, errs)
        columns["trace"] += [trace.label] * times.size
        columns["time_us"] += list(times)
        for k, name in enumerate(("p_uu", "p_ud", "p_du", "p_dd")):
            columns[name] += list(obs[:, k])
        columns["p_ud_stderr"] += list(err[:, 1])
        fits[trace.label] = _trace_fits(times, obs[:, 1], err[:, 1], trace.windows, 2 * u, shots)
        fits[trace.label]["p_ud_exact"] = probs[:, 1].tolist()
    cols = {k: np.array(v) if k != "trace" else np.array(v, dtype=object) for k, v in columns.items()}
    if len(traces) == 1:
        del cols["trace"]
    _add_phase_offsets(fits)
    return ExperimentResult("exchange", cols, {"coupling_mhz": u, "fits": fits})


def _trace_fits(times, y, err, windows, freq, shots):
    after = times >= (max((w.start + w.duration for w in windows), default=0.0) - 1e-12)
    x = exchange_time(times, windows)[after]
    yy, ee = y[after], err[after]
    sigma = _fit_sigma(ee, shots)
    out = {"window_end_us": float(max((w.start + w.duration for w in windows), default=0.0)),
           "windows": [asdict(w) for w in windows]}
    out["fixed"] = fit_sinusoid(x, yy, fixed_frequency=freq, sigma=sigma).as_dict()
    out["free"] = fit_sinusoid(x, yy, sigma=sigma).as_dict()
    out["post_window_variance"] = float(np.var(yy)) if yy.size else math.nan
    return out


def _add_phase_offsets(fits: dict):
    ref = next((f for f in fits.values() if not f["windows"]), None)
    if ref is None:
        return
    for f in fits.values():
        f["phase_offset"] = wrap_phase(f["fixed"]["phase"] - ref["fixed"]["phase"])


def raman_leakage_probe(
    array: AtomArray,
    beam: BeamSpec | None,
    sequences: dict[str, Sequence[FreezeWindow]],
    t_max: float,
    prep: Preparation = Preparation(),
    freeze_shift: float = 4.8,
    imp: Imperfections = Imperfections(),
    step: float = 0.002,
    threads: int | None = None,
) -> ExperimentResult:
    """Maximum population of the ``zero`` level on the addressed atom during exchange sequences.

    The preparation pulse is included (records start at its beginning).
    """
    imp = replace(imp, raman=True, scattering="off" if imp.scattering == "jumps" else imp.scattering)
    scheme = imp.scheme()
    total = prep.duration + t_max
    times = np.linspace(0.0, total, int(round(total / step)) + 1)
    pattern = "0" + "." * (array.n_atoms - 1)

    def run(item):
        name, windows = item
        sched = exchange_schedule(array, beam, prep, windows, times, freeze_shift, imp, include_prep_records=True)
        branches = prepare_with_inefficiency("u" * array.n_atoms, scheme, imp.eta)
        p0 = sum(b.weight * populations(evolve(b.state, sched).states, pattern, scheme) for b in branches)
        return name, p0

    out = pmap(run, list(sequences.items()), threads)
    cols = {"sequence": [], "time_us": [], "p_zero": []}
    maxima = {}
    for name, p0 in out:
        cols["sequence"] += [name] * times.size
        cols["time_us"] += list(times - prep.duration)
        cols["p_zero"] += list(p0)
        maxima[name] = float(np.max(p0))
    return ExperimentResult(
        "raman_leakage",
        {"sequence": np.array(cols["sequence"], dtype=object), "time_us": np.array(cols["time_us"]),
         "p_zero": np.array(cols["p_zero"])},
        {"max_transfer": max(maxima.values()), "max_by_sequence": maxima},
    )
