"""Limit laws for nonuniformly expanding interval maps."""

from ._core import (
    BlowupError,
    ConfigError,
    ConvergenceError,
    Decomposition,
    DegenerateVariance,
    DomainError,
    InsufficientData,
    InvalidArgument,
    Map,
    Observable,
    TruncationError,
    birkhoff_samples,
    center,
    covariance,
    decompose,
    moment_scaling,
    parse_config,
    run_config,
    simulate_fast_slow,
    wip_test,
)

__version__ = "0.1.0"

__all__ = [
    "BlowupError",
    "ConfigError",
    "ConvergenceError",
    "Decomposition",
    "DegenerateVariance",
    "DomainError",
    "InsufficientData",
    "InvalidArgument",
    "Map",
    "Observable",
    "TruncationError",
    "birkhoff_samples",
    "center",
    "covariance",
    "decompose",
    "moment_scaling",
    "parse_config",
    "run_config",
    "simulate_fast_slow",
    "wip_test",
]
