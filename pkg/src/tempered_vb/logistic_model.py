"""Binary logistic regression with random design.

P(Y = y | Z = z, theta) = sigmoid(y z^T theta) for y in {-1, +1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .tempered_core import LipschitzStats, TemperConfig, epsilon_n_lipschitz

__all__ = [
    "LogisticDatum",
    "LogisticModel",
    "LogisticStats",
    "logistic_rate",
    "estimate_stats",
    "grad_log_lik",
    "log_lik",
    "log_ratio_second_moment_mc",
    "renyi_logistic",
    "sample_design",
    "svb_expectation_bound",
]


class LogisticDatum(NamedTuple):
    y: int
    z: np.ndarray


def _check(theta, datum: LogisticDatum) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    z = np.asarray(datum.z, dtype=float)
    if theta.shape != z.shape:
        raise ValueError(f"theta has shape {theta.shape}, covariates {z.shape}")
    if datum.y not in (-1, 1):
        raise ValueError("labels must be -1 or +1")
    return theta, z


def log_lik(theta, datum: LogisticDatum) -> float:
    """-log(1 + exp(-y z^T theta)) in softplus form."""
    theta, z = _check(theta, datum)
    return -float(np.logaddexp(0.0, -datum.y * (z @ theta)))


def grad_log_lik(theta, datum: LogisticDatum) -> np.ndarray:
    theta, z = _check(theta, datum)
    return datum.y * z * expit(-datum.y * (z @ theta))


@dataclass
class LogisticModel:
    """A logistic sample stored as arrays; implements the likelihood protocol of ``gaussian_vb``."""

    y: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        if self.Z.shape[0] != self.y.size:
            raise ValueError("y and Z disagree on the sample size")
        if not np.all(np.abs(self.y) == 1):
            raise ValueError("labels must be -1 or +1")

    @classmethod
    def from_data(cls, data: Sequence[LogisticDatum]) -> "LogisticModel":
        return cls(np.array([x.y for x in data]), np.array([x.z for x in data]))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    def data(self) -> list[LogisticDatum]:
        return [LogisticDatum(int(y), z) for y, z in zip(self.y, self.Z)]

    def loglik(self, theta) -> float:
        return -float(np.sum(np.logaddexp(0.0, -self.y * (self.Z @ theta))))

    def grad_loglik(self, theta) -> np.ndarray:
        w = self.y * expit(-self.y * (self.Z @ theta))
        return self.Z.T @ w


@dataclass(frozen=True)
class LogisticStats:
    K1: float
    K2: float
    smoothness_L: float


def estimate_stats(
    data, psd_floor: float, d: int, prior_variance: float = 1.0, family: str = "full"
) -> LogisticStats:
    """Plug-in K1 = 2 mean|x|, K2 = 4 mean|x|^2 and a smoothness bound.

    ``|x|`` is the norm of the whole datum (y, z).  The smoothness bound is
    sum_i |z_i z_i^T|_2 + 1/vartheta^2, plus d/psi for the log-determinant
    when a positive floor is used.
    """
    model = data if isinstance(data, LogisticModel) else LogisticModel.from_data(data)
    if model.n == 0:
        raise ValueError("empty sample")
    if model.dim != d:
        raise ValueError(f"covariates have dimension {model.dim}, expected {d}")
    if psd_floor == 0 and family == "full":
        raise ValueError("the full family needs psd_floor > 0 for a finite smoothness bound")
    zsq = np.sum(model.Z**2, axis=1)
    xsq = 1.0 + zsq
    K1 = 2.0 * float(np.mean(np.sqrt(xsq)))
    K2 = 4.0 * float(np.mean(xsq))
    L = float(np.sum(zsq)) + 1.0 / prior_variance
    if psd_floor > 0:
        L += d / psd_floor
    return LogisticStats(K1, K2, L)


def sample_design(
    kind: str,
    d: int,
    n: int,
    seed: int,
    theta0=None,
    s2: float = 1.0,
) -> LogisticModel:
    """Draw covariates (``unit_sphere`` or ``gaussian``) and labels from P_theta0."""
    if d < 1 or n < 1:
        raise ValueError("d and n must be positive")
    rng = np.random.default_rng(seed)
    theta0 = np.zeros(d) if theta0 is None else np.asarray(theta0, dtype=float)
    g = rng.standard_normal((n, d))
    if kind == "unit_sphere":
        Z = g / np.linalg.norm(g, axis=1, keepdims=True)
    elif kind == "gaussian":
        Z = math.sqrt(s2) * g
    else:
        raise ValueError(f"unknown design kind {kind!r}")
    p1 = expit(Z @ theta0)
    y = np.where(rng.random(n) < p1, 1.0, -1.0)
    return LogisticModel(y, Z)


def renyi_logistic(thetas, theta0, alpha: float, Z_ref) -> np.ndarray:
    """D_alpha(P_theta, P_theta0) for each row of ``thetas`` over the joint law of (Y, Z).

    Per design point the conditional law is a two-point distribution; the
    design expectation inside the log is a Monte Carlo average over ``Z_ref``.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    Z_ref = np.atleast_2d(np.asarray(Z_ref, dtype=float))
    u = thetas @ Z_ref.T
    u0 = (Z_ref @ np.asarray(theta0, dtype=float))[None, :]
    # log P(Y=+1) = -softplus(-u), log P(Y=-1) = -softplus(u)
    lp_pos, lp_neg = -np.logaddexp(0.0, -u), -np.logaddexp(0.0, u)
    lq_pos, lq_neg = -np.logaddexp(0.0, -u0), -np.logaddexp(0.0, u0)
    s = np.logaddexp(alpha * lp_pos + (1 - alpha) * lq_pos, alpha * lp_neg + (1 - alpha) * lq_neg)
    log_mean = logsumexp(s, axis=1) - math.log(Z_ref.shape[0])
    return np.maximum(log_mean / (alpha - 1.0), 0.0)


def log_ratio_second_moment_mc(
    theta0, sigma2: float, Z_ref, samples: int, seed: int
) -> float:
    """Monte Carlo estimate of int E[log^2(p_theta/p_theta0)(X)] N(theta0, sigma2 I)(d theta).

    The inner expectation is exact over Y given Z and averaged over ``Z_ref``.
    """
    rng = np.random.default_rng(seed)
    theta0 = np.asarray(theta0, dtype=float)
    Z_ref = np.atleast_2d(np.asarray(Z_ref, dtype=float))
    thetas = theta0 + math.sqrt(sigma2) * rng.standard_normal((samples, theta0.size))
    u = thetas @ Z_ref.T
    u0 = (Z_ref @ theta0)[None, :]
    p0 = expit(u0)
    d_pos = -np.logaddexp(0.0, -u) + np.logaddexp(0.0, -u0)
    d_neg = -np.logaddexp(0.0, u) + np.logaddexp(0.0, u0)
    return float(np.mean(p0 * d_pos**2 + (1 - p0) * d_neg**2))


def logistic_rate(
    stats: LogisticStats, d: int, n: int, theta0_norm: float, prior_variance: float
) -> float:
    """eps_n of the log-Lipschitz rate with K1, K2 in place of B1, B2."""
    lip = LipschitzStats(B1=stats.K1, B2=stats.K2, d=d, theta0_norm=theta0_norm)
    return epsilon_n_lipschitz(lip, n, TemperConfig(alpha=0.5, prior_variance=prior_variance))


def svb_expectation_bound(B: float, L: float, T: int, n: int, alpha: float, eps_n: float) -> float:
    """sqrt(2BL/T)/(n(1-alpha)) + (1+alpha)/(1-alpha) eps_n for the averaged SVB iterate."""
    return math.sqrt(2.0 * B * L / T) / (n * (1.0 - alpha)) + (1.0 + alpha) / (1.0 - alpha) * eps_n
