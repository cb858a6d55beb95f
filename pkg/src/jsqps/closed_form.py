"""Fitted closed-form arrival rates and birth-death join probabilities."""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import logsumexp

from .core import ArrivalRateProfile, JoinProbabilities, NumericalError, ParameterError, SystemConfig
from .markov import tail_rates

log = logging.getLogger(__name__)

# Empirical rational/polynomial fits in rho, highest power first.
K_B_NUM = (-0.0263, 0.0054, 0.1155)
K_B_DEN = (1.0, -1.939, 0.9534)
K_C = (-6.2973, 14.3382, -12.3532, 6.2557, -1.005)
K_D_NUM = (-226.1839, 342.3814, 10.2851)
K_D_DEN = (1.0, -146.2751, -481.1256, 599.9166)
K_E = (0.4462, -1.8317, 2.4376, -0.0512)
K_F = (-0.29, 0.8822, -0.5349, 1.0112)
K_G = (-0.1864, 1.195, -0.016)


def _ratio(num, den, rho: float, name: str) -> float:
    d = np.polyval(den, rho)
    if abs(d) < 1e-12:
        raise NumericalError(f"denominator of {name} vanishes at rho={rho}")
    return float(np.polyval(num, rho) / d)


def k_coefficients(rho: float) -> dict[str, float]:
    if abs(1 - rho) < 1e-12:
        raise NumericalError("denominator of k_a vanishes at rho=1")
    return {
        "a": rho / (1 - rho),
        "b": _ratio(K_B_NUM, K_B_DEN, rho, "k_b"),
        "c": float(np.polyval(K_C, rho)),
        "d": _ratio(K_D_NUM, K_D_DEN, rho, "k_d"),
        "e": float(np.polyval(K_E, rho)),
        "f": float(np.polyval(K_F, rho)),
        "g": float(np.polyval(K_G, rho)),
    }


def _clamp(value: float, n: int, config: SystemConfig) -> float:
    if value < 0 or not np.isfinite(value):
        log.warning("closed-form lambda_%d = %.4g at R=%d, rho=%.3g; clamped to 0", n, value, config.R, config.rho)
        return 0.0
    return value


def lambda_n_closed_form(config: SystemConfig, L2: int, tail: str = "printed") -> ArrivalRateProfile:
    """lambda_0..lambda_2 from the fitted k-coefficients, mu (Lambda/(n mu))^n beyond.

    lambda_1 depends on lambda_2, so the order of evaluation is 0, 2, 1.
    ``tail="limit"`` replaces the n >= 3 rates with mu rho^R (see ``tail_rates``).
    """
    config.require_stable()
    if L2 < 3:
        raise ParameterError("L2 must be at least 3 for the closed-form profile")
    rho, R, mu = config.rho, config.R, config.mu
    k = k_coefficients(rho)
    lam0 = mu * (k["a"] - k["b"] * k["c"] ** R - k["d"] * k["e"] ** R)
    lam2 = mu * k["f"] * k["g"] ** R
    if lam0 == 0:
        raise NumericalError("lambda_0 vanishes; lambda_1 is undefined")
    den = lam2 / mu - rho**R + 1
    if abs(den) < 1e-12:
        raise NumericalError("denominator of lambda_1 vanishes")
    lam1 = mu * (rho**R - 1 + mu * (rho - rho ** (R + 1)) / (lam0 * (1 - rho))) / den

    rates = np.empty(L2)
    rates[0] = _clamp(lam0, 0, config)
    rates[1] = _clamp(lam1, 1, config)
    rates[2] = _clamp(lam2, 2, config)
    rates[3:] = tail_rates(config, np.arange(3, L2), tail)
    return ArrivalRateProfile(rates, "closed-form")


def join_probabilities_birth_death(lam: ArrivalRateProfile, mu: float, L2: int) -> JoinProbabilities:
    """Stationary law of the birth-death chain with births lambda_n and deaths mu.

    Products of lambda_i / mu are accumulated in log space and the truncated
    distribution is renormalised to sum to one.
    """
    rates = np.asarray(lam.rates, dtype=float)
    if len(rates) < L2:
        raise ParameterError(f"need {L2} arrival rates, got {len(rates)}")
    if np.isnan(rates).any() or not mu > 0:
        raise NumericalError("birth-death rates contain NaN or non-positive mu")
    with np.errstate(divide="ignore"):
        log_ratio = np.log(rates[: L2 - 1]) - np.log(mu)
    log_a = np.concatenate(([0.0], np.cumsum(log_ratio)))
    probs = np.exp(log_a - logsumexp(log_a))
    return JoinProbabilities(probs / probs.sum(), "birth-death")
