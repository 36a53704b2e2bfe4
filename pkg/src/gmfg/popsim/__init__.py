"""Finite-population simulation, deviations and empirical epsilon."""
from ._backend import BACKEND, get_sweep
from .bundle import PathBundle
from .config import DEVIATION_KINDS, DeviationSpec, Gains, PopulationConfig
from .simulate import (
    EpsilonReport,
    SimOutput,
    cost,
    estimate_epsilon,
    feedback_control,
    gap_statistics,
    limit_fields,
    perturbation_costs,
    simulate_closed_loop,
    simulate_deviation,
    simulate_limiting,
)

__all__ = [
    "BACKEND", "get_sweep", "PathBundle", "DEVIATION_KINDS", "DeviationSpec", "Gains", "PopulationConfig",
    "EpsilonReport", "SimOutput", "cost", "estimate_epsilon", "feedback_control", "gap_statistics",
    "limit_fields", "perturbation_costs", "simulate_closed_loop", "simulate_deviation", "simulate_limiting",
]
