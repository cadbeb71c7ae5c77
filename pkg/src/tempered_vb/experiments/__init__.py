"""Configuration, orchestration and reporting for the numerical experiments."""

from .config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config, replication_seed
from .report import RunReport, load_report, strip_runtime
from .runners import (
    OUTPUT_DIR_ENV,
    InvariantViolation,
    divergence_property_checks,
    gaussian_quadrature_check,
    loglog_slope,
    rate_sweep,
    run_experiment,
    run_mixture_demo,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "InvariantViolation",
    "OUTPUT_DIR_ENV",
    "RunReport",
    "divergence_property_checks",
    "dump_config",
    "gaussian_quadrature_check",
    "load_config",
    "load_report",
    "loglog_slope",
    "parse_config",
    "rate_sweep",
    "replication_seed",
    "run_experiment",
    "run_mixture_demo",
    "strip_runtime",
]
