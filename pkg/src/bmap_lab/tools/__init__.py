"""Spectral analysis, simulation, spine, FKPP solver and cross-checks."""

from .experiments import ExperimentConfig, ExperimentOutcome, ExperimentRunner, run_experiment
from .fkpp_solver import FkppField, FkppOptions, Grid1D, front_speed, init_field, solve, step
from .simulator import martingale_trajectory, simulate, simulate_replicas, velocity_estimate
from .spectral import Regime, RegimeReport, SpectralReport, regime_report, spectral_report, theta_star
from .spine import TiltedModel, many_to_one_check, simulate_spine, spine_speed, tilt_model
from .wave_checks import martingale_problem_check, representation_check, wave_profile_mc

__all__ = [
    "ExperimentConfig",
    "ExperimentOutcome",
    "ExperimentRunner",
    "run_experiment",
    "FkppField",
    "FkppOptions",
    "Grid1D",
    "front_speed",
    "init_field",
    "solve",
    "step",
    "martingale_trajectory",
    "simulate",
    "simulate_replicas",
    "velocity_estimate",
    "Regime",
    "RegimeReport",
    "SpectralReport",
    "regime_report",
    "spectral_report",
    "theta_star",
    "TiltedModel",
    "many_to_one_check",
    "simulate_spine",
    "spine_speed",
    "tilt_model",
    "martingale_problem_check",
    "representation_check",
    "wave_profile_mc",
]
