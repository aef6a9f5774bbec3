"""Canned experiments and the fits used to analyse them."""

from .experiments import (
    ExchangeTrace,
    ExperimentResult,
    FreezeWindow,
    Imperfections,
    Preparation,
    exchange_experiment,
    exchange_schedule,
    exchange_time,
    imprint_window,
    lightshift_spectroscopy,
    raman_leakage_probe,
    rabi_pair,
    spectroscopy_map,
    spectroscopy_pulse,
)
from .fitting import LineFit, SinusoidFit, fit_rabi_line, fit_sinusoid, wrap_phase

__all__ = [
    "ExchangeTrace",
    "ExperimentResult",
    "FreezeWindow",
    "Imperfections",
    "LineFit",
    "Preparation",
    "SinusoidFit",
    "exchange_experiment",
    "exchange_schedule",
    "exchange_time",
    "fit_rabi_line",
    "fit_sinusoid",
    "imprint_window",
    "lightshift_spectroscopy",
    "raman_leakage_probe",
    "rabi_pair",
    "spectroscopy_map",
    "spectroscopy_pulse",
    "wrap_phase",
]
