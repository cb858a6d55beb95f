"""Conditional tail probabilities w_n(t), their assembly into P(T <= t), and methods A-F.

Each server is treated as an M/M/1-PS queue with state-dependent arrival
rates lambda_n. Given n customers already present at arrival, the tail
w_n(t) = P(T > t | n) is the n-th entry of exp(D t) 1 for the defective
generator D below. It is evaluated either by a matrix exponential or by
uniformization (a Poisson mixture of powers of I + D / theta).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.special import gammaln
from scipy.stats import poisson

from .closed_form import join_probabilities_birth_death, lambda_n_closed_form
from .core import (
    ArrivalRateProfile,
    Hyperparameters,
    JoinProbabilities,
    NumericalError,
    ParameterError,
    SojournCdf,
    SystemConfig,
    TimeGrid,
)
from .markov import join_probabilities_chain, lambda_n_mc

W_SLACK = 1e-9
H_SLACK = 1e-6
MONO_REPAIR = 1e-6
POISSON_TAIL = 1e-12


@dataclass(frozen=True, eq=False)
class DefectiveGenerator:
    """Tridiagonal bands of D; ``sub[n]`` is the rate from state n + 1 down to n."""

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.diag)

    def toarray(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.sub, -1) + np.diag(self.sup, 1)


def build_defective_generator(lam: ArrivalRateProfile, mu: float, L2: int) -> DefectiveGenerator:
    """Row n: (n / (n + 1)) mu down, -(lambda_n + mu) on the diagonal, lambda_n up.

    The last row's upward rate is dropped; its diagonal keeps -(lambda + mu).
    """
    rates = np.asarray(lam.rates, dtype=float)
    if len(rates) < L2:
        raise ParameterError(f"need {L2} arrival rates, got {len(rates)}")
    rates = rates[:L2]
    n = np.arange(1, L2)
    return DefectiveGenerator(
        sub=n / (n + 1) * mu,
        diag=-(rates + mu),
        sup=rates[:-1].copy(),
    )


@dataclass(frozen=True, eq=False)
class ConditionalTailMatrix:
    """``w[n, i] = P(T > t_i | n customers present at arrival)``."""

    grid: TimeGrid
    w: np.ndarray = field(repr=False)
    source: str


def _clamp_tail(w: np.ndarray, what: str) -> np.ndarray:
    lo, hi = w.min(), w.max()
    if lo < -W_SLACK or hi > 1 + W_SLACK or not np.isfinite(w).all():
        raise NumericalError(f"{what} left [0, 1] beyond tolerance (min {lo:.3g}, max {hi:.3g})")
    return np.clip(w, 0.0, 1.0, out=w)


def w_matrix_exponential(D: DefectiveGenerator, grid: TimeGrid) -> ConditionalTailMatrix:
    """exp(D t_i) 1 on a uniform grid via one Pade exponential of D * dt."""
    try:
        step = scipy.linalg.expm(D.toarray() * grid.dt)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"matrix exponential failed: {exc}")
    if not np.isfinite(step).all():
        raise NumericalError("matrix exponential produced non-finite entries")
    w = np.empty((D.dimension, grid.size))
    v = np.ones(D.dimension)
    w[:, 0] = v
    for i in range(1, grid.size):
        v = step @ v
        w[:, i] = v
    return ConditionalTailMatrix(grid, _clamp_tail(w, "matrix-exponential tail"), "expm")


def poisson_terms_needed(rate_time: float, tail: float = POISSON_TAIL) -> int:
    """Number of Poisson terms i = 0..N-1 whose omitted mass stays below ``tail``."""
    if rate_time <= 0:
        return 1
    return int(poisson.isf(tail, rate_time)) + 2


def poisson_weights(rate_times: np.ndarray, n_terms: int) -> np.ndarray:
    """``out[i, k] = P(N = i)`` for N ~ Poisson(rate_times[k]), computed in log space."""
    x = np.asarray(rate_times, dtype=float)
    i = np.arange(n_terms)[:, None]
    log_fact = gammaln(i + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = i * np.log(x)[None, :] - x[None, :] - log_fact
    logw[:, x == 0] = -np.inf
    out = np.exp(logw)
    out[0, x == 0] = 1.0
    return out


def h_table(lam: ArrivalRateProfile, mu: float, L2: int, theta: float, n_terms: int) -> np.ndarray:
    """``h[:, i] = (I + D / theta)^i 1`` by the three-term recursion, shape (L2, n_terms)."""
    rates = np.asarray(lam.rates, dtype=float)[:L2]
    n = np.arange(L2)
    down = n / (n + 1) * mu / theta
    stay = 1.0 - (rates + mu) / theta
    up = rates / theta
    up[-1] = 0.0
    h = np.empty((L2, n_terms))
    h[:, 0] = 1.0
    for i in range(n_terms - 1):
        prev = h[:, i]
        nxt = stay * prev
        nxt[1:] += down[1:] * prev[:-1]
        nxt[:-1] += up[:-1] * prev[1:]
        h[:, i + 1] = nxt
    if h.min() < -H_SLACK or h.max() > 1 + H_SLACK:
        raise NumericalError(
            f"uniformization table left [0, 1] (min {h.min():.3g}, max {h.max():.3g}); "
            "theta does not dominate the exit rates"
        )
    return h


def w_uniformization(
    lam: ArrivalRateProfile,
    mu: float,
    grid: TimeGrid,
    L2: int,
    n_terms: int | None = None,
    chunk: int = 2048,
) -> ConditionalTailMatrix:
    """Poisson-weighted sum of the h-recursion with theta = max(lambda_n) + mu.

    By default enough terms are kept that the omitted Poisson mass at t_max is
    below 1e-12; ``n_terms`` caps the sum instead.
    """
    rates = np.asarray(lam.rates, dtype=float)
    if len(rates) < L2:
        raise ParameterError(f"need {L2} arrival rates, got {len(rates)}")
    theta = float(rates[:L2].max() + mu)
    if n_terms is None:
        n_terms = poisson_terms_needed(theta * grid.t_max)
    h = h_table(lam, mu, L2, theta, n_terms)
    w = np.empty((L2, grid.size))
    t = grid.points
    for start in range(0, grid.size, chunk):
        stop = min(start + chunk, grid.size)
        w[:, start:stop] = h @ poisson_weights(theta * t[start:stop], n_terms)
    return ConditionalTailMatrix(grid, _clamp_tail(w, "uniformization tail"), "uniformization")


def assemble_W(A: JoinProbabilities, w: ConditionalTailMatrix, source: str = "") -> SojournCdf:
    """P(T <= t_i) = 1 - sum_n A_n w_n(t_i)."""
    probs = np.asarray(A.probs, dtype=float)
    if len(probs) != w.w.shape[0]:
        raise ParameterError(f"A has {len(probs)} entries but w has {w.w.shape[0]} rows")
    values = np.clip(1.0 - probs @ w.w, 0.0, 1.0)
    if abs(values[0]) > 1e-9:
        raise NumericalError(f"assembled CDF at t=0 is {values[0]:.3g}, expected 0")
    values[0] = 0.0
    running = np.maximum.accumulate(values)
    deficit = running - values
    if deficit.max() > MONO_REPAIR:
        i = int(np.argmax(deficit > MONO_REPAIR))
        raise NumericalError(f"assembled CDF decreases by {deficit[i]:.3g} at index {i}")
    return SojournCdf(w.grid, running, source)


class MethodId(str, enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"
    F = "F"

    @property
    def recipe(self) -> tuple[str, str, str]:
        """(lambda_n source, A_n source, w_n source)."""
        return METHOD_RECIPES[self]

    def __str__(self) -> str:
        return self.value


METHOD_RECIPES = {
    MethodId.A: ("mc", "mc", "expm"),
    MethodId.B: ("mc", "birth-death", "expm"),
    MethodId.C: ("closed-form", "birth-death", "expm"),
    MethodId.D: ("mc", "mc", "uniformization"),
    MethodId.E: ("mc", "birth-death", "uniformization"),
    MethodId.F: ("closed-form", "birth-death", "uniformization"),
}


def arrival_profile(source: str, config: SystemConfig, hyper: Hyperparameters) -> ArrivalRateProfile:
    if source == "mc":
        return lambda_n_mc(config, hyper)
    return lambda_n_closed_form(config, hyper.L2, hyper.tail)


def join_profile(source: str, lam: ArrivalRateProfile, config: SystemConfig, hyper: Hyperparameters) -> JoinProbabilities:
    if source == "mc":
        return join_probabilities_chain(config, hyper)
    return join_probabilities_birth_death(lam, config.mu, hyper.L2)


def conditional_tails(source: str, lam: ArrivalRateProfile, mu: float, grid: TimeGrid, L2: int) -> ConditionalTailMatrix:
    if source == "expm":
        return w_matrix_exponential(build_defective_generator(lam, mu, L2), grid)
    return w_uniformization(lam, mu, grid, L2)


def compute_method(method, config: SystemConfig, hyper: Hyperparameters, grid: TimeGrid) -> SojournCdf:
    method = MethodId(str(method))
    config.require_stable()
    lam_src, a_src, w_src = method.recipe
    lam = arrival_profile(lam_src, config, hyper)
    A = join_profile(a_src, lam, config, hyper)
    w = conditional_tails(w_src, lam, config.mu, grid, hyper.L2)
    return assemble_W(A, w, source=method.value)


@dataclass(frozen=True)
class RegimeRule:
    R: int
    rho_low: float
    rho_high: float
    method: MethodId


class RegimeMap:
    """Piecewise-constant map from (R, rho) to the preferred method.

    Every R listed must have rules covering (0, 1) without gaps. An R missing
    from the map borrows the rules of the nearest listed R.
    """

    def __init__(self, rules):
        self.rules = sorted(rules, key=lambda r: (r.R, r.rho_low))
        if not self.rules:
            raise ParameterError("regime map has no rules")
        self._by_R: dict[int, list[RegimeRule]] = {}
        for rule in self.rules:
            self._by_R.setdefault(rule.R, []).append(rule)
        for R, rules in self._by_R.items():
            edge = 0.0
            for rule in rules:
                if rule.rho_low > edge + 1e-12 or rule.rho_high <= rule.rho_low:
                    raise ParameterError(f"regime map for R={R} has a gap or empty interval near rho={edge}")
                edge = max(edge, rule.rho_high)
            if edge < 1.0 - 1e-12:
                raise ParameterError(f"regime map for R={R} stops at rho={edge}")

    def lookup(self, R: int, rho: float) -> MethodId:
        key = min(self._by_R, key=lambda r: (abs(r - R), r))
        for rule in self._by_R[key]:
            if rule.rho_low <= rho < rule.rho_high:
                return rule.method
        return self._by_R[key][-1].method

    def to_text(self) -> str:
        lines = ["# R rho_low rho_high method"]
        lines += [f"{r.R} {r.rho_low:.6g} {r.rho_high:.6g} {r.method.value}" for r in self.rules]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RegimeMap":
        rules = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParameterError(f"regime map line {lineno}: expected 'R rho_low rho_high method'")
            try:
                rules.append(RegimeRule(int(parts[0]), float(parts[1]), float(parts[2]), MethodId(parts[3].upper())))
            except ValueError as exc:
                raise ParameterError(f"regime map line {lineno}: {exc}")
        return cls(rules)

    @classmethod
    def load(cls, path) -> "RegimeMap":
        return cls.from_text(Path(path).read_text())


def default_regime_map() -> RegimeMap:
    """D below rho = 0.6, C up to 0.97, E above; a single server keeps D up to 0.97."""
    rules = [RegimeRule(1, 0.0, 0.97, MethodId.D), RegimeRule(1, 0.97, 1.0, MethodId.E)]
    for R in range(2, 11):
        rules += [
            RegimeRule(R, 0.0, 0.6, MethodId.D),
            RegimeRule(R, 0.6, 0.97, MethodId.C),
            RegimeRule(R, 0.97, 1.0, MethodId.E),
        ]
    return RegimeMap(rules)


DEFAULT_REGIME_MAP = default_regime_map()


def best_method(config: SystemConfig, regime_map: RegimeMap | None = None) -> MethodId:
    config.require_stable()
    return (regime_map or DEFAULT_REGIME_MAP).lookup(config.R, config.rho)

