"""Tempered posteriors on finite parameter sets and the bound/rate evaluators.

Everything here is a pure function of its arguments.  Log-weights are
normalised with ``logsumexp``; argmax-type ties resolve to the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from .divergences import as_distribution, kl_discrete

__all__ = [
    "BoundQuery",
    "ConcentrationLevel",
    "DiscreteModel",
    "LipschitzStats",
    "TemperConfig",
    "concentration_level",
    "dv_functional",
    "dv_gap",
    "empirical_risk",
    "epsilon_n_lipschitz",
    "expectation_bound",
    "exponential_tilting",
    "matrix_bound_constant",
    "matrix_bound_rhs",
    "misspecified_bound",
    "pac_bayes_rhs",
    "tempered_posterior_discrete",
]


@dataclass(frozen=True)
class TemperConfig:
    alpha: float
    prior_variance: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.prior_variance > 0:
            raise ValueError("prior_variance must be positive")


@dataclass(frozen=True)
class DiscreteModel:
    """Finite parameter set with a prior and a J x n log-likelihood table.

    ``theta0`` optionally marks the index of the data-generating point,
    needed to form the log-likelihood ratio r_n(theta, theta0).
    """

    prior: np.ndarray
    loglik: np.ndarray
    theta0: Optional[int] = None

    def __post_init__(self):
        prior = as_distribution(self.prior)
        table = np.atleast_2d(np.asarray(self.loglik, dtype=float))
        if table.shape[0] != prior.size:
            raise ValueError(
                f"log-likelihood table has {table.shape[0]} rows for {prior.size} points"
            )
        if np.any(np.isnan(table)) or np.any(table == np.inf):
            raise ValueError("log-likelihood entries must be finite or -inf")
        if self.theta0 is not None and not 0 <= self.theta0 < prior.size:
            raise ValueError("theta0 index out of range")
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "loglik", table)

    @property
    def n(self) -> int:
        return self.loglik.shape[1]

    def total_loglik(self) -> np.ndarray:
        return self.loglik.sum(axis=1)


def exponential_tilting(prior, h) -> np.ndarray:
    """The Gibbs measure d pi_h / d pi = exp(h) / int exp(h) d pi."""
    prior = as_distribution(prior)
    h = np.asarray(h, dtype=float)
    with np.errstate(divide="ignore"):
        logw = np.log(prior) + h
    if not np.any(np.isfinite(logw)):
        raise ValueError("tilting has zero total mass")
    logw = np.where(np.isfinite(logw), logw, -np.inf)
    return np.exp(logw - logsumexp(logw))


def tempered_posterior_discrete(model: DiscreteModel, cfg: TemperConfig) -> np.ndarray:
    """Weights proportional to prior_j * exp(alpha * sum_i log p_j(x_i))."""
    total = model.total_loglik()
    if not np.any(np.isfinite(total) & (model.prior > 0)):
        raise ValueError("every parameter point has zero tempered likelihood")
    return exponential_tilting(model.prior, cfg.alpha * total)


def dv_functional(rho, prior, h) -> float:
    """int h d rho - KL(rho, prior), with -inf when rho is not dominated by prior."""
    rho = as_distribution(rho)
    h = np.asarray(h, dtype=float)
    kl = kl_discrete(rho, prior)
    if math.isinf(kl):
        return -math.inf
    mask = rho > 0
    return float(np.dot(rho[mask], h[mask]) - kl)


def dv_gap(rho, prior, h) -> float:
    """log int e^h d prior minus the Donsker-Varadhan functional at ``rho``.

    Nonnegative, and zero exactly at the exponential tilting of ``prior`` by ``h``.
    """
    prior = as_distribution(prior)
    rho = as_distribution(rho)
    if np.any((rho > 0) & (prior == 0)):
        raise ValueError("rho is not absolutely continuous with respect to the prior")
    h = np.asarray(h, dtype=float)
    mask = prior > 0
    log_mgf = float(logsumexp(h[mask], b=prior[mask]))
    return max(log_mgf - dv_functional(rho, prior, h), 0.0)


def empirical_risk(model: DiscreteModel) -> np.ndarray:
    """r_n(theta_j, theta0) = sum_i log p_theta0(x_i) / p_theta_j(x_i) for each j."""
    if model.theta0 is None:
        raise ValueError("model.theta0 must designate the true parameter point")
    total = model.total_loglik()
    return total[model.theta0] - total


def pac_bayes_rhs(rho, model: DiscreteModel, cfg: TemperConfig, eps: float) -> float:
    """Right-hand side of the PAC-Bayes inequality bounding int D_alpha d rho.

    alpha/(1-alpha) * int r_n/n d rho + [KL(rho, pi) + log(1/eps)] / (n (1-alpha)).
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    rho = as_distribution(rho)
    kl = kl_discrete(rho, model.prior)
    if math.isinf(kl):
        raise ValueError("KL(rho, prior) is infinite")
    a, n = cfg.alpha, model.n
    r = empirical_risk(model)
    mask = rho > 0
    risk = float(np.dot(rho[mask], r[mask])) / n
    return a / (1.0 - a) * risk + (kl - math.log(eps)) / (n * (1.0 - a))


@dataclass(frozen=True)
class LipschitzStats:
    """Moments of the Lipschitz modulus M(X) of the log-likelihood.

    ``B1 = E M(X)`` and ``B2 = E M(X)^2``.  ``log_ratio_second_moment`` holds an
    estimate of int E[log^2(p_theta / p_theta0)] d rho_n when one is available.
    """

    B1: float
    B2: float
    d: int
    theta0_norm: float = 0.0
    log_ratio_second_moment: Optional[float] = field(default=None)

    def __post_init__(self):
        if self.B1 < 0 or self.B2 < 0 or self.theta0_norm < 0:
            raise ValueError("B1, B2 and theta0_norm must be nonnegative")
        if self.d < 1:
            raise ValueError("d must be at least 1")


def epsilon_n_lipschitz(stats: LipschitzStats, n: int, cfg: TemperConfig) -> float:
    """Concentration rate for a log-Lipschitz model with isotropic Gaussian prior."""
    if n < 2:
        raise ValueError("n must be at least 2")
    d, th2 = stats.d, cfg.prior_variance
    kl_branch = (d / n) * (0.5 * math.log(th2 * n * n * math.sqrt(d)) + 1.0 / (n * th2))
    kl_branch += stats.theta0_norm**2 / (n * th2) - d / (2.0 * n)
    value = max(stats.B1 / n, stats.B2 / n**2, kl_branch)
    if value <= 0:
        raise ValueError(f"nonpositive rate {value}; check prior_variance")
    return value


@dataclass(frozen=True)
class BoundQuery:
    eps_n: float
    n: int
    alpha: float
    eps: Optional[float] = None
    eta: Optional[float] = None

    def __post_init__(self):
        if not self.eps_n > 0:
            raise ValueError("eps_n must be positive")
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        for name in ("eps", "eta"):
            v = getattr(self, name)
            if v is not None and not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")

    def default_budgets(self) -> tuple[float, float]:
        """(eps, eta) = (exp(-n eps_n), 1/(n eps_n)) unless given explicitly."""
        ne = self.n * self.eps_n
        eps = self.eps if self.eps is not None else math.exp(-ne)
        eta = self.eta if self.eta is not None else 1.0 / ne
        return eps, eta


@dataclass(frozen=True)
class ConcentrationLevel:
    level: float
    prob: float
    fine_level: Optional[float] = None
    fine_prob: Optional[float] = None


def concentration_level(q: BoundQuery) -> ConcentrationLevel:
    """Level 2(alpha+1)/(1-alpha) eps_n holding with probability 1 - 2/(n eps_n).

    When ``q.eps`` or ``q.eta`` is set, the finer level
    ((alpha+1) eps_n + alpha sqrt(eps_n/(n eta)) + log(1/eps)/n)/(1-alpha)
    and its probability 1 - eps - eta are reported too.
    """
    ne = q.n * q.eps_n
    if ne <= 2:
        raise ValueError(f"n * eps_n = {ne} <= 2 gives a vacuous probability")
    a = q.alpha
    level = 2.0 * (a + 1.0) / (1.0 - a) * q.eps_n
    prob = 1.0 - 2.0 / ne
    fine_level = fine_prob = None
    if q.eps is not None or q.eta is not None:
        eps, eta = q.default_budgets()
        fine_level = (
            (a + 1.0) * q.eps_n + a * math.sqrt(q.eps_n / (q.n * eta)) - math.log(eps) / q.n
        ) / (1.0 - a)
        fine_prob = 1.0 - eps - eta
    return ConcentrationLevel(level, prob, fine_level, fine_prob)


def expectation_bound(eps_n: float, alpha: float) -> float:
    """(1+alpha)/(1-alpha) * eps_n, the in-expectation bound."""
    return (1.0 + alpha) / (1.0 - alpha) * eps_n


def misspecified_bound(min_kl: float, eps_n: float, cfg: TemperConfig) -> float:
    a = cfg.alpha
    return a / (1.0 - a) * min_kl + expectation_bound(eps_n, a)


def matrix_bound_constant(a: float) -> float:
    """C(a) = log(8 sqrt(pi) Gamma(a) 2^(10a+1)) + 3, evaluated in log space."""
    if not a > 0:
        raise ValueError("a must be positive")
    return (
        math.log(8.0)
        + 0.5 * math.log(math.pi)
        + float(gammaln(a))
        + (10.0 * a + 1.0) * math.log(2.0)
        + 3.0
    )


def matrix_bound_rhs(
    r: int,
    m: int,
    p: int,
    n: int,
    a: float,
    alpha: float,
    approx_err: float,
    B: float,
    sigma2: float,
) -> float:
    """Expected d_{alpha,sigma} bound for tempered mean-field matrix completion at rank r."""
    if not 1 <= r <= min(m, p):
        raise ValueError("r must satisfy 1 <= r <= min(m, p)")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    fit = alpha / (1.0 - alpha) * (approx_err + math.sqrt(B) / n) ** 2 / (2.0 * sigma2 * m * p)
    complexity = (
        2.0 * (1.0 + alpha) * (1.0 + 2.0 * a) * r * (m + p)
        * (math.log(n * m * p) + matrix_bound_constant(a))
        / (n * (1.0 - alpha))
    )
    return fit + complexity
