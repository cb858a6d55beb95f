"""Distances between grid CDFs, percentile errors and best-method scans."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .core import (
    URLLC_ETAS,
    Hyperparameters,
    ParameterError,
    SaturationError,
    SojournCdf,
    SystemConfig,
    TimeGrid,
    make_time_grid,
    percentile,
)
from .simulator import SimulationConfig, ServiceDistribution, PSVariant, aggregate_trials, run_simulation
from .sojourn import MethodId, RegimeMap, RegimeRule, best_method, compute_method

TIE_TOLERANCE = 1e-6
CSV_COLUMNS = ["R", "rho", "method", "wasserstein", "eta", "approx_pct", "sim_pct", "error"]


def wasserstein(G: SojournCdf, H: SojournCdf) -> float:
    """Left Riemann sum of |G - H| over the shared grid."""
    if not G.grid.same_as(H.grid):
        raise ParameterError("wasserstein needs both CDFs on the same grid")
    diff = np.abs(np.asarray(G.values) - np.asarray(H.values))
    return float(diff[:-1].sum() * G.grid.dt)


def percentile_error(approx: SojournCdf, simulated: SojournCdf, eta: float) -> float:
    """Positive when the approximation over-estimates the eta-percentile."""
    return percentile(approx, eta) - percentile(simulated, eta)


@dataclass
class ComparisonReport:
    method: MethodId
    R: int
    rho: float
    wasserstein: float
    percentile_errors: dict = field(default_factory=dict)

    def rows(self):
        base = [self.R, f"{self.rho:.6g}", self.method.value, f"{self.wasserstein:.10g}"]
        if not self.percentile_errors:
            yield base + ["", "", "", ""]
        for eta, (a, s, err) in sorted(self.percentile_errors.items()):
            yield base + [f"{eta:g}", _fmt(a), _fmt(s), _fmt(err)]


def _fmt(x) -> str:
    return "" if x is None else f"{x:.10g}"


def compare(
    approx: SojournCdf,
    simulated: SojournCdf,
    config: SystemConfig,
    method,
    etas: Iterable[float] = URLLC_ETAS,
) -> ComparisonReport:
    """Wasserstein distance plus (approx, simulated, error) per eta.

    A percentile that saturates the grid is reported as None.
    """
    errors = {}
    for eta in etas:
        a = _safe_percentile(approx, eta)
        s = _safe_percentile(simulated, eta)
        errors[eta] = (a, s, None if a is None or s is None else a - s)
    return ComparisonReport(MethodId(str(method)), config.R, config.rho, wasserstein(approx, simulated), errors)


def _safe_percentile(cdf: SojournCdf, eta: float):
    try:
        return percentile(cdf, eta)
    except SaturationError:
        return None


def write_reports_csv(reports: Iterable[ComparisonReport], stream, header_comment: str | None = None) -> None:
    if header_comment:
        stream.write(f"# {header_comment}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for report in reports:
        writer.writerows(report.rows())


@dataclass(frozen=True)
class SimBudget:
    q_max: float = 40000.0
    q_warmup: float = 8000.0
    trials: int = 4
    seed: int = 0
    service: str = "exp"
    ps_variant: str = "standard"

    def simulation_config(self, config: SystemConfig) -> SimulationConfig:
        return SimulationConfig(
            config,
            service=ServiceDistribution.preset(self.service, config.mu),
            q_max=self.q_max,
            q_warmup=self.q_warmup,
            trials=self.trials,
            seed=self.seed,
            ps_variant=PSVariant.parse(self.ps_variant),
        )


DESK_BUDGET = SimBudget()
FULL_BUDGET = SimBudget(q_max=160000.0)


def simulate_cdf(config: SystemConfig, budget: SimBudget = DESK_BUDGET, grid: TimeGrid | None = None) -> SojournCdf:
    grid = grid or make_time_grid()
    return aggregate_trials(run_simulation(budget.simulation_config(config)), grid)


def pick_winner(distances: dict, preferred: MethodId | None = None, tol: float = TIE_TOLERANCE) -> MethodId:
    """Method with the smallest distance.

    Methods within ``tol`` of the minimum are tied; ties go to ``preferred`` when
    it is among them, otherwise to the alphabetically first.
    """
    if not distances:
        raise ParameterError("no methods to choose from")
    best = min(distances.values())
    tied = sorted((m for m, d in distances.items() if d <= best + tol), key=lambda m: m.value)
    if preferred in tied:
        return preferred
    return tied[0]


@dataclass
class ScanResult:
    winners: dict
    distances: dict

    def regime_map(self) -> RegimeMap:
        """Per scanned R, rho intervals split at midpoints between scanned loads."""
        rules = []
        for R in sorted({R for R, _ in self.winners}):
            rhos = sorted(rho for r, rho in self.winners if r == R)
            edges = [0.0] + [(a + b) / 2 for a, b in zip(rhos, rhos[1:])] + [1.0]
            for rho, lo, hi in zip(rhos, edges, edges[1:]):
                rules.append(RegimeRule(R, lo, hi, self.winners[R, rho]))
        return RegimeMap(rules)

    def share(self, method, cells=None) -> float:
        cells = list(self.winners) if cells is None else list(cells)
        return sum(self.winners[c] == MethodId(str(method)) for c in cells) / len(cells)


def regime_scan(
    cells: Iterable[tuple[int, float]],
    methods: Iterable = tuple(MethodId),
    budget: SimBudget = DESK_BUDGET,
    grid: TimeGrid | None = None,
    hyper_for: Callable[[int], Hyperparameters] = Hyperparameters.default_for,
    baseline: Callable[[SystemConfig], SojournCdf] | None = None,
    mu: float = 1.0,
) -> ScanResult:
    """Most accurate method per (R, rho) cell against a simulated baseline."""
    grid = grid or make_time_grid()
    methods = [MethodId(str(m)) for m in methods]
    baseline = baseline or (lambda cfg: simulate_cdf(cfg, budget, grid))
    winners, distances = {}, {}
    for R, rho in cells:
        config = SystemConfig.from_load(R, rho, mu)
        sim = baseline(config)
        hyper = hyper_for(R)
        dist = {m: wasserstein(compute_method(m, config, hyper, grid), sim) for m in methods}
        distances[R, rho] = dist
        winners[R, rho] = pick_winner(dist, preferred=best_method(config))
    return ScanResult(winners, distances)
