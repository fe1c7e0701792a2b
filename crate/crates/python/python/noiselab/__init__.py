"""Python front end for the noiselab Rust core."""

import json

from . import _noiselab
from ._noiselab import (
    LrSchedule,
    Optimizer,
    QuadraticModel,
    __version__,
    aggregate,
    effective_lr,
    format_lr,
    format_lr_range,
    ou_stationary_variance,
    planned_runs,
    select_optimal,
    temperature,
)

CHECKS = ("eps-crit", "lin-scaling", "sde-vs-sgd", "momentum-equiv")


def run_check(name, seed=0):
    """Reports (as dicts) of one named check with its default setup."""
    return json.loads(_noiselab.run_check(name, seed))


def run_experiment(config_toml, seed=None):
    """Runs a TOML experiment config; returns the report as a dict."""
    return json.loads(_noiselab.run_experiment(config_toml, seed))


__all__ = [
    "CHECKS",
    "LrSchedule",
    "Optimizer",
    "QuadraticModel",
    "__version__",
    "aggregate",
    "effective_lr",
    "format_lr",
    "format_lr_range",
    "ou_stationary_variance",
    "planned_runs",
    "run_check",
    "run_experiment",
    "select_optimal",
    "temperature",
]
