"""Shared domain types: system parameters, time grids, grid CDFs and percentiles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EPS_MONO = 1e-9
MAX_GRID_POINTS = 10**7

#: Markov chain truncation L1 per number of servers R (chosen so (L1+1)^(2R) < 1e11).
DEFAULT_L1 = {1: 22, 2: 22, 3: 22, 4: 13, 5: 7, 6: 5, 7: 4, 8: 3, 9: 3, 10: 2}
DEFAULT_L2 = 130
DEFAULT_TMAX = 182.32
DEFAULT_DT = 0.01
URLLC_ETAS = (0.99, 0.999, 0.9999, 0.99999)


class JsqpsError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(JsqpsError, ValueError):
    """Invalid user-supplied parameter."""


class NumericalError(JsqpsError, ArithmeticError):
    """A computation broke down numerically."""


class ResourceError(JsqpsError):
    """A requested computation exceeds the configured size bounds."""


class SaturationError(NumericalError):
    """A CDF never exceeds the requested level on its grid."""

    def __init__(self, eta: float, max_value: float):
        self.eta = eta
        self.max_value = max_value
        super().__init__(
            f"CDF never exceeds eta={eta} on the grid (max attained value {max_value:.12g}); "
            "increase t_max"
        )


@dataclass(frozen=True)
class SystemConfig:
    """R parallel processor-sharing servers fed at total Poisson rate ``lam``.

    ``mu`` is the intended service rate of a single customer.
    """

    R: int
    lam: float
    mu: float

    def __post_init__(self):
        if not isinstance(self.R, (int, np.integer)) or isinstance(self.R, bool) or self.R < 1:
            raise ParameterError(f"R must be a positive integer, got {self.R!r}")
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise ParameterError(f"arrival rate must be positive, got {self.lam!r}")
        if not (math.isfinite(self.mu) and self.mu > 0):
            raise ParameterError(f"service rate must be positive, got {self.mu!r}")
        object.__setattr__(self, "R", int(self.R))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "mu", float(self.mu))

    @classmethod
    def from_load(cls, R: int, rho: float, mu: float = 1.0) -> "SystemConfig":
        return cls(R, rho * R * mu, mu)

    @property
    def rho(self) -> float:
        return self.lam / (self.R * self.mu)

    def require_stable(self) -> None:
        if not 0 < self.rho < 1:
            raise ParameterError(
                f"traffic intensity rho={self.rho:.6g} must lie in (0, 1) for the analytical methods"
            )


@dataclass(frozen=True)
class Hyperparameters:
    """Truncation limits: L1 per server for the Markov chain, L2 for the whole system."""

    L1: int
    L2: int = DEFAULT_L2
    eps: float = 1e-6
    tail: str = "printed"

    def __post_init__(self):
        if self.L1 < 2:
            raise ParameterError(f"L1 must be at least 2, got {self.L1}")
        if self.L2 < self.L1:
            raise ParameterError(f"L2 ({self.L2}) must be >= L1 ({self.L1})")
        if not self.eps > 0:
            raise ParameterError("eps must be positive")
        if self.tail not in ("printed", "limit"):
            raise ParameterError(f"tail must be 'printed' or 'limit', got {self.tail!r}")

    @classmethod
    def default_for(cls, R: int, **overrides) -> "Hyperparameters":
        L1 = overrides.pop("L1", None)
        if L1 is None:
            L1 = DEFAULT_L1.get(R, 2)
        return cls(L1=L1, **overrides)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    t_max: float
    dt: float
    points: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.points)

    def same_as(self, other: "TimeGrid") -> bool:
        return self.size == other.size and math.isclose(self.dt, other.dt, rel_tol=1e-12)


def make_time_grid(t_max: float = DEFAULT_TMAX, dt: float = DEFAULT_DT) -> TimeGrid:
    """Uniform grid 0, dt, 2 dt, ... up to ``t_max`` inclusive."""
    if not (t_max > 0 and dt > 0) or not (math.isfinite(t_max) and math.isfinite(dt)):
        raise ParameterError(f"t_max and dt must be positive, got t_max={t_max!r}, dt={dt!r}")
    ratio = t_max / dt
    if ratio > MAX_GRID_POINTS:
        raise ResourceError(f"grid of {ratio:.3g} steps exceeds the {MAX_GRID_POINTS} point bound")
    # the tolerance absorbs representation error, e.g. 0.03 / 0.01 = 2.9999999999999996
    k = int(math.floor(ratio + 1e-9))
    points = np.arange(k + 1, dtype=float) * dt
    points.flags.writeable = False
    return TimeGrid(float(t_max), float(dt), points)


@dataclass(frozen=True, eq=False)
class SojournCdf:
    """Values of P(T <= t) on a time grid, tagged with the method that produced them."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    source: str

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.size,):
            raise ParameterError(
                f"CDF has {values.shape} values for a grid of {self.grid.size} points"
            )
        check_cdf_values(values)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def t(self) -> np.ndarray:
        return self.grid.points

    def mean(self) -> float:
        """Mean of the distribution truncated at t_max (left Riemann sum of the tail)."""
        return float(np.sum(1.0 - self.values) * self.grid.dt)


def check_cdf_values(values: np.ndarray, eps: float = EPS_MONO) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalError("CDF contains non-finite values")
    if values.min() < 0 or values.max() > 1:
        raise NumericalError(
            f"CDF leaves [0, 1]: min={values.min():.3g}, max={values.max():.3g}"
        )
    if values[0] != 0:
        raise NumericalError(f"CDF at t=0 must be 0, got {values[0]:.3g}")
    drops = np.diff(values) < -eps
    if drops.any():
        i = int(np.argmax(drops))
        raise NumericalError(f"CDF decreases between indices {i} and {i + 1}")


def percentile(cdf: SojournCdf, eta: float) -> float:
    """Smallest grid time whose CDF value strictly exceeds ``eta``."""
    if not 0 < eta < 1:
        raise ParameterError(f"eta must lie strictly between 0 and 1, got {eta!r}")
    above = cdf.values > eta
    if not above.any():
        raise SaturationError(eta, float(cdf.values.max()))
    return float(cdf.grid.points[int(np.argmax(above))])


def empirical_cdf(samples, grid: TimeGrid, source: str = "simulation") -> SojournCdf:
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size == 0:
        raise ParameterError("empirical_cdf needs at least one sample")
    if x[0] < 0 or not np.all(np.isfinite(x)):
        raise ParameterError("samples must be finite and non-negative")
    counts = np.searchsorted(x, grid.points, side="right")
    return SojournCdf(grid, counts / x.size, source)


@dataclass(frozen=True, eq=False)
class ArrivalRateProfile:
    """Arrival rate lambda_n seen by one server already holding n customers, n < L2."""

    rates: np.ndarray = field(repr=False)
    source: str

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float)
        if rates.ndim != 1 or rates.size == 0:
            raise ParameterError("arrival rates must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(rates)) or rates.min() < 0:
            raise NumericalError("arrival rates must be finite and non-negative")
        rates.flags.writeable = False
        object.__setattr__(self, "rates", rates)

    def __len__(self) -> int:
        return len(self.rates)


@dataclass(frozen=True, eq=False)
class JoinProbabilities:
    """Probability A_n that an arriving customer finds n customers at its server."""

    probs: np.ndarray = field(repr=False)
    source: str

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ParameterError("join probabilities must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(probs)) or probs.min() < 0 or probs.max() > 1:
            raise NumericalError("join probabilities must lie in [0, 1]")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise NumericalError(f"join probabilities sum to {probs.sum():.12g}, not 1")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return len(self.probs)
