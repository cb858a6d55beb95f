"""Sojourn-time distributions of join-shortest-queue processor-sharing server farms."""

from .core import (
    DEFAULT_L1,
    URLLC_ETAS,
    Hyperparameters,
    JsqpsError,
    NumericalError,
    ParameterError,
    ResourceError,
    SaturationError,
    SojournCdf,
    SystemConfig,
    TimeGrid,
    make_time_grid,
    percentile,
)
from .metrics import compare, percentile_error, regime_scan, wasserstein
from .simulator import ServiceDistribution, SimulationConfig, PSVariant, run_simulation
from .sojourn import MethodId, RegimeMap, best_method, compute_method

__all__ = [
    "DEFAULT_L1",
    "URLLC_ETAS",
    "Hyperparameters",
    "JsqpsError",
    "NumericalError",
    "ParameterError",
    "ResourceError",
    "SaturationError",
    "SojournCdf",
    "SystemConfig",
    "TimeGrid",
    "make_time_grid",
    "percentile",
    "compare",
    "percentile_error",
    "regime_scan",
    "wasserstein",
    "ServiceDistribution",
    "SimulationConfig",
    "PSVariant",
    "run_simulation",
    "MethodId",
    "RegimeMap",
    "best_method",
    "compute_method",
]
