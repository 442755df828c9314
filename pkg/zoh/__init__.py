"""Zeroth-order optimization with hybrid random/coordinate gradient estimates."""
from __future__ import annotations

from .errors import (
    ConfigError,
    DiagnosticsError,
    DivergenceError,
    EstimatorError,
    ImportanceError,
    ObjectiveError,
    OptimizeConfigError,
    ZohError,
)
from .estimators import CgeConfig, GradientEstimate, RgeConfig, cge_component, cge_full, cge_sampled, hge, rge
from .importance import ProbabilityVector, optimal_alpha, sparsification_probabilities
from .objectives import make_cw_attack, make_function, make_logistic, make_quadratic
from .optimize import HgdConfig, RunTrace, StepSchedule, zo_hgd, zo_scd, zo_sgd, zo_signsgd

__version__ = "0.1.0"

__all__ = [
    "CgeConfig",
    "ConfigError",
    "DiagnosticsError",
    "DivergenceError",
    "EstimatorError",
    "GradientEstimate",
    "HgdConfig",
    "ImportanceError",
    "ObjectiveError",
    "OptimizeConfigError",
    "ProbabilityVector",
    "RgeConfig",
    "RunTrace",
    "StepSchedule",
    "ZohError",
    "cge_component",
    "cge_full",
    "cge_sampled",
    "hge",
    "make_cw_attack",
    "make_function",
    "make_logistic",
    "make_quadratic",
    "optimal_alpha",
    "rge",
    "sparsification_probabilities",
    "zo_hgd",
    "zo_scd",
    "zo_sgd",
    "zo_signsgd",
]
