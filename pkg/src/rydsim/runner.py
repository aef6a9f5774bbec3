"""Turn a validated configuration into protocol calls."""

from __future__ import annotations

import math

import numpy as np

from . import seqfile
from .optics import BeamSpec
from .protocols import (
    ExchangeTrace,
    ExperimentResult,
    FreezeWindow,
    Imperfections,
    Preparation,
    exchange_experiment,
    imprint_window,
    lightshift_spectroscopy,
    raman_leakage_probe,
    rabi_pair,
    spectroscopy_map,
)
from .spinmodel import AtomArray, pair_coupling


def build_array(cfg: seqfile.ExperimentConfig) -> AtomArray:
    a = cfg.atoms
    overrides = {(o.i, o.j): o.u_mhz for o in a.coupling_overrides}
    return AtomArray(np.array(a.positions_um, dtype=float), a.c3_mhz_um3, overrides)


def build_beam(cfg: seqfile.ExperimentConfig) -> BeamSpec | None:
    if not cfg.beams:
        return None
    b = cfg.beams[0]
    return BeamSpec(b.power_mw, b.waist_um, b.center_um, b.axis, b.detuning_mhz, b.omega_ref_mhz, b.power_ref_mw)


def build_imperfections(cfg: seqfile.ExperimentConfig) -> Imperfections:
    i = cfg.imperfections
    return Imperfections(
        eta=i.eta,
        scattering=i.scattering,
        raman=i.raman,
        zeeman_split=i.zeeman_split_mhz,
        zero_shift=i.zero_shift_mhz,
        tau_6p=i.tau_6p_ns,
        light_shift_mode=i.light_shift_mode,
        scattered_outcome=i.scattered_outcome,
        readout_flip=i.readout_flip,
        rise_time=i.rise_time_us,
        jump_dt=i.jump_dt_us,
        with_zero=cfg.levels.zero,
        with_ground=cfg.levels.ground,
    )


def _preparation(p: seqfile.PreparationConfig) -> Preparation:
    return Preparation(p.shift_mhz, p.rabi_mhz, p.ideal)


def resolve_windows(trace: seqfile.TraceConfig, coupling: float, freeze_shift: float) -> tuple[FreezeWindow, ...]:
    """Explicit windows as given; ``phase_pi`` windows calibrated for the pair."""
    out = []
    for w in trace.freeze_windows:
        if w.phase_pi is not None:
            out.append(imprint_window(coupling, freeze_shift, w.phase_pi * math.pi))
        else:
            out.append(FreezeWindow(w.start_us, w.duration_us))
    return tuple(out)


def run_config(cfg: seqfile.ExperimentConfig, threads: int | None = None) -> ExperimentResult:
    """Run the configured protocol; ``metadata`` carries the config echo and seed."""
    result = _dispatch(cfg, threads)
    result.metadata.update({"config": seqfile.to_dict(cfg), "seed": cfg.seed, "shots": cfg.shots})
    return result


def _dispatch(cfg: seqfile.ExperimentConfig, threads: int | None) -> ExperimentResult:
    p = cfg.protocol
    imp = build_imperfections(cfg)
    beam = build_beam(cfg)
    array = build_array(cfg)
    mw = cfg.microwave
    g = seqfile.grid_values

    if p.name == "lightshift_spectroscopy":
        return lightshift_spectroscopy(beam, g(p.addr_detunings_mhz), g(p.mw_detunings_mhz), p.pulse_us, mw.rabi_mhz,
                                       imp, cfg.shots, cfg.seed, threads, p.shift_mode)
    if p.name == "spectroscopy_map":
        return spectroscopy_map(array, beam, g(p.shifts_mhz), g(p.mw_detunings_mhz), mw.rabi_mhz, p.pulse_us, imp,
                                cfg.shots, cfg.seed, threads)
    if p.name == "rabi_pair":
        return rabi_pair(array, mw.rabi_mhz, g(p.durations_us), p.pair_detuning_mhz, p.single_detuning_mhz, imp,
                         cfg.shots, cfg.seed)
    u = pair_coupling(array, 0, 1)
    if p.name == "exchange":
        traces = [ExchangeTrace(t.label, resolve_windows(t, u, p.freeze_shift_mhz)) for t in p.traces]
        return exchange_experiment(array, beam, traces, g(p.times_us), _preparation(p.preparation),
                                   p.freeze_shift_mhz, imp, cfg.shots, cfg.seed, threads)
    if p.name == "raman_leakage":
        seqs = {t.label: resolve_windows(t, u, p.freeze_shift_mhz) for t in p.sequences}
        return raman_leakage_probe(array, beam, seqs, p.t_max_us, _preparation(p.preparation), p.freeze_shift_mhz,
                                   imp, p.step_us, threads)
    raise AssertionError(f"unhandled protocol {p.name}")
