"""Truncated Euler-Maruyama schemes for SDEs driven by Brownian motion and Poisson jumps."""

from .analysis import (
    ErrorTable,
    ExactGeometric,
    RateFit,
    boundedness_estimate,
    fit_rate,
    recursion_bound,
    stability_decay,
    strong_error,
    theoretical_rate_high,
    theoretical_rate_low,
)
from .errors import ConfigurationError, DomainError, ResourceError, SimulationError
from .model import (
    AssumptionConstants,
    SdeProblem,
    TruncationPolicy,
    check_khasminskii_preserved,
    derived_constants,
    get_preset,
    pi_delta,
    power_policy,
    truncated_coefficients,
)
from .noise import NoiseGrid, coarsen, generate, increment_moment_test
from .scheme import PathResult, Record, SchemeConfig, SchemeKind, simulate_exact_geometric, simulate_path, step

__version__ = "0.1.0"

__all__ = [
    "AssumptionConstants",
    "ConfigurationError",
    "DomainError",
    "ErrorTable",
    "ExactGeometric",
    "NoiseGrid",
    "PathResult",
    "RateFit",
    "Record",
    "ResourceError",
    "SchemeConfig",
    "SchemeKind",
    "SdeProblem",
    "SimulationError",
    "TruncationPolicy",
    "boundedness_estimate",
    "check_khasminskii_preserved",
    "coarsen",
    "derived_constants",
    "fit_rate",
    "generate",
    "get_preset",
    "increment_moment_test",
    "pi_delta",
    "power_policy",
    "recursion_bound",
    "simulate_exact_geometric",
    "simulate_path",
    "stability_decay",
    "step",
    "strong_error",
    "theoretical_rate_high",
    "theoretical_rate_low",
    "truncated_coefficients",
]
