"""Truncated CTMC of the whole M/M/R-JSQ-PS system.

A state is the occupancy vector (a_1, ..., a_R) with every a_u < L1. States are
stored as rows of an integer array in lexicographic order, so the index of a
state is its base-L1 numeral.
"""

from __future__ import annotations

import functools
import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.csgraph
import scipy.sparse.linalg
from scipy.special import gammaln

from .core import (
    ArrivalRateProfile,
    Hyperparameters,
    JoinProbabilities,
    NumericalError,
    ParameterError,
    ResourceError,
    SystemConfig,
)

log = logging.getLogger(__name__)

MAX_STATES = 10**7
DENSE_SOLVE_LIMIT = 5000
#: bound on the number of defined transitions, (L1 + 1)^(2R)
MAX_TRANSITIONS = 10 * 10**10


def enumerate_states(R: int, L1: int) -> np.ndarray:
    """All occupancy vectors with entries below ``L1``, shape ``(L1**R, R)``."""
    if R < 1 or L1 < 2:
        raise ParameterError(f"need R >= 1 and L1 >= 2, got R={R}, L1={L1}")
    if L1**R > MAX_STATES:
        raise ResourceError(f"L1^R = {L1}^{R} states exceeds the bound of {MAX_STATES}")
    idx = np.arange(L1**R)
    weights = L1 ** np.arange(R - 1, -1, -1)
    return (idx[:, None] // weights[None, :]) % L1


def state_index(state, L1: int) -> int:
    index = 0
    for a in state:
        index = index * L1 + int(a)
    return index


def check_truncation_size(R: int, L1: int) -> None:
    if (L1 + 1) ** (2 * R) >= MAX_TRANSITIONS:
        raise ResourceError(
            f"(L1+1)^(2R) = {L1 + 1}^{2 * R} exceeds {MAX_TRANSITIONS:.0e} transitions"
        )


def build_generator(config: SystemConfig, states: np.ndarray) -> sp.csr_matrix:
    """Infinitesimal generator of the truncated chain.

    Every busy server completes at rate mu. An arrival picks uniformly among the
    servers at the minimum occupancy; arrivals are dropped once the minimum
    reaches L1 - 1, i.e. when every server is full.
    """
    states = np.asarray(states)
    n, R = states.shape
    L1 = int(round(n ** (1.0 / R)))
    if L1**R != n:
        raise ParameterError("states must be a full enumeration of L1^R occupancy vectors")
    idx = np.arange(n)
    weights = L1 ** np.arange(R - 1, -1, -1)
    m = states.min(axis=1)
    at_min = states == m[:, None]
    count_min = at_min.sum(axis=1)

    rows, cols, vals = [], [], []
    for u in range(R):
        busy = states[:, u] > 0
        rows.append(idx[busy])
        cols.append(idx[busy] - weights[u])
        vals.append(np.full(busy.sum(), config.mu))

        joins = at_min[:, u] & (m < L1 - 1)
        rows.append(idx[joins])
        cols.append(idx[joins] + weights[u])
        vals.append(config.lam / count_min[joins])

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    return Q.tocsr()


def solve_steady_state(Q) -> np.ndarray:
    """Stationary vector p with pQ = 0 and sum(p) = 1.

    One balance equation is replaced by the normalisation row. Small systems
    are solved densely, larger ones with a sparse LU factorisation (minimum
    degree ordering on A^T A keeps the fill-in of these lattice chains low).
    """
    Q = sp.csr_matrix(Q)
    n = Q.shape[0]
    if n == 1:
        return np.ones(1)
    n_comp, _ = scipy.sparse.csgraph.connected_components(
        Q - sp.diags(Q.diagonal()), directed=True, connection="strong"
    )
    if n_comp != 1:
        raise NumericalError(
            f"generator is reducible ({n_comp} communicating classes); "
            "the stationary system is singular"
        )

    A = Q.T.tolil()
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[-1] = 1.0
    if n <= DENSE_SOLVE_LIMIT:
        dense = A.toarray()
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            try:
                p = scipy.linalg.solve(dense, b)
            except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
                cond = np.linalg.cond(dense)
                raise NumericalError(f"stationary solve failed (condition {cond:.3g}): {exc}")
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.sparse.linalg.MatrixRankWarning)
            try:
                p = scipy.sparse.linalg.splu(A.tocsc(), permc_spec="MMD_ATA").solve(b)
            except (RuntimeError, scipy.sparse.linalg.MatrixRankWarning) as exc:
                raise NumericalError(f"sparse stationary solve failed: {exc}")

    if not np.all(np.isfinite(p)):
        raise NumericalError("stationary solve produced non-finite probabilities")
    if p.min() < -1e-12:
        raise NumericalError(f"stationary solve produced a negative probability {p.min():.3g}")
    p = np.clip(p, 0.0, None)
    p /= p.sum()
    residual = np.abs(Q.T @ p).max()
    if residual > 1e-8:
        raise NumericalError(f"stationary residual max|pQ| = {residual:.3g} exceeds 1e-8")
    return p


def arrival_fractions(p: np.ndarray, states: np.ndarray, L1: int) -> np.ndarray:
    """Share of the total arrival stream that server 1 receives while holding n customers.

    Numerator sums p_j / C(s_j, n) over states where server 1 holds n and n is
    the minimum; the denominator is the probability that server 1 holds n.
    """
    first = states[:, 0]
    m = states.min(axis=1)
    count_min = (states == m[:, None]).sum(axis=1)
    eligible = first == m
    num = np.bincount(first[eligible], weights=p[eligible] / count_min[eligible], minlength=L1)
    den = np.bincount(first, weights=p, minlength=L1)
    pi = np.zeros(L1)
    ok = den >= 1e-14
    pi[ok] = num[ok] / den[ok]
    if not ok.all():
        log.warning("occupancy probability below 1e-14 for n in %s; pi_n set to 0", np.flatnonzero(~ok).tolist())
    return pi


def join_probabilities_mc(p: np.ndarray, states: np.ndarray, L2: int | None = None) -> JoinProbabilities:
    """A_n as the probability that the least loaded server holds n customers."""
    m = states.min(axis=1)
    L1 = int(states.max()) + 1
    probs = np.bincount(m, weights=p, minlength=max(L1, L2 or 0))
    return JoinProbabilities(probs, "mc")


def truncation_mass(p: np.ndarray, states: np.ndarray, L1: int) -> float:
    """Probability that some server sits at the truncation boundary L1 - 1.

    The truncated chain cannot hold L1 customers at a server, so the boundary
    mass stands in for the probability of reaching L1 or more.
    """
    return float(p[states.max(axis=1) == L1 - 1].sum())


def tail_rates(config: SystemConfig, n, form: str = "printed") -> np.ndarray:
    """Arrival rates far from the shortest queue.

    ``printed``: mu (Lambda / (n mu))^n, evaluated in log space.
    ``limit``: mu rho^R, the large-n level the solved chain settles at; the two
    forms coincide at n = R.
    """
    n = np.asarray(n, dtype=float)
    if form == "limit":
        return np.full(n.shape, config.mu * config.rho**config.R)
    if form != "printed":
        raise ParameterError(f"unknown tail form {form!r}")
    with np.errstate(divide="ignore"):
        log_rate = np.log(config.mu) + n * (np.log(config.lam) - np.log(n * config.mu))
    return np.exp(log_rate)


@dataclass(frozen=True, eq=False)
class ChainSolution:
    config: SystemConfig
    L1: int
    states: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)

    def arrival_fractions(self) -> np.ndarray:
        return arrival_fractions(self.p, self.states, self.L1)

    def join_probabilities(self, L2: int | None = None) -> JoinProbabilities:
        return join_probabilities_mc(self.p, self.states, L2)

    def truncation_mass(self) -> float:
        return truncation_mass(self.p, self.states, self.L1)


def lumped_states(R: int, L1: int) -> np.ndarray:
    """Sorted (non-decreasing) occupancy vectors: one representative per server relabelling."""
    return np.array(list(itertools.combinations_with_replacement(range(L1), R)), dtype=np.int64).reshape(-1, R)


def _encode(rows: np.ndarray, L1: int) -> np.ndarray:
    weights = L1 ** np.arange(rows.shape[1] - 1, -1, -1, dtype=np.int64)
    return rows.astype(np.int64) @ weights


def build_lumped_generator(config: SystemConfig, classes: np.ndarray, L1: int) -> sp.csr_matrix:
    """Generator of the chain lumped over server permutations.

    Servers are identical and ties are broken uniformly, so the occupancy
    multiset is itself Markov: a value v held by k servers drops at rate k mu,
    and an arrival raises one minimum server at total rate Lambda.
    """
    n, R = classes.shape
    codes = _encode(classes, L1)
    rows, cols, vals = [], [], []
    for u in range(R):
        # first position of each value in the sorted row stands for the whole group
        first = np.ones(n, dtype=bool) if u == 0 else classes[:, u] != classes[:, u - 1]
        busy = first & (classes[:, u] > 0)
        if busy.any():
            k = (classes[busy] == classes[busy, u][:, None]).sum(axis=1)
            target = classes[busy].copy()
            target[:, u] -= 1
            rows.append(np.flatnonzero(busy))
            cols.append(_sorted_index(target, codes, L1))
            vals.append(k * config.mu)
    joins = classes[:, 0] < L1 - 1
    if joins.any():
        target = classes[joins].copy()
        # raising the last server at the minimum keeps the row sorted
        last_min = (classes[joins] == classes[joins, :1]).sum(axis=1) - 1
        target[np.arange(len(target)), last_min] += 1
        rows.append(np.flatnonzero(joins))
        cols.append(_sorted_index(target, codes, L1))
        vals.append(np.full(joins.sum(), config.lam))
    Q = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    return Q.tocsr()


def _sorted_index(rows: np.ndarray, codes: np.ndarray, L1: int) -> np.ndarray:
    return np.searchsorted(codes, _encode(np.sort(rows, axis=1), L1))


def expand_lumped(p_lumped: np.ndarray, classes: np.ndarray, states: np.ndarray, L1: int) -> np.ndarray:
    """Spread each class probability evenly over the occupancy vectors it contains."""
    R = states.shape[1]
    cls = _sorted_index(states, _encode(classes, L1), L1)
    log_mult = gammaln(R + 1) - sum(gammaln((states == v).sum(axis=1) + 1) for v in range(L1))
    return p_lumped[cls] / np.exp(log_mult)


@functools.lru_cache(maxsize=32)
def solve_chain(config: SystemConfig, L1: int) -> ChainSolution:
    """Build and solve the truncated chain; results are cached per (config, L1).

    Up to ``DENSE_SOLVE_LIMIT`` states the full generator is solved directly.
    Larger chains are solved on the permutation-lumped chain, which is exact
    here, and expanded back onto the full state space.
    """
    states = enumerate_states(config.R, L1)
    if len(states) <= DENSE_SOLVE_LIMIT:
        p = solve_steady_state(build_generator(config, states))
    else:
        classes = lumped_states(config.R, L1)
        p_lumped = solve_steady_state(build_lumped_generator(config, classes, L1))
        p = expand_lumped(p_lumped, classes, states, L1)
        p /= p.sum()
    states.flags.writeable = False
    p.flags.writeable = False
    return ChainSolution(config, L1, states, p)


def lambda_n_mc(config: SystemConfig, hyper: Hyperparameters) -> ArrivalRateProfile:
    """lambda_n = pi_n * Lambda below L1, spliced onto the closed-form tail up to L2."""
    check_truncation_size(config.R, hyper.L1)
    chain = solve_chain(config, hyper.L1)
    rates = np.empty(hyper.L2)
    rates[: hyper.L1] = chain.arrival_fractions() * config.lam
    rates[hyper.L1 :] = tail_rates(config, np.arange(hyper.L1, hyper.L2), hyper.tail)
    if config.R >= 2:
        occupied = np.bincount(chain.states[:, 0], weights=chain.p, minlength=hyper.L1) > 1e-8
        head = rates[: hyper.L1]
        rising = np.flatnonzero((np.diff(head) > 1e-9) & occupied[1:])
        if rising.size:
            log.warning("lambda_n increases at n=%s for R=%d, rho=%.3g", rising + 1, config.R, config.rho)
    return ArrivalRateProfile(rates, "mc")


def join_probabilities_chain(config: SystemConfig, hyper: Hyperparameters) -> JoinProbabilities:
    check_truncation_size(config.R, hyper.L1)
    return solve_chain(config, hyper.L1).join_probabilities(hyper.L2)
