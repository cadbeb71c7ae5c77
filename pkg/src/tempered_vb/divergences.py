"""Renyi, Kullback-Leibler and Hellinger divergences.

Covers finite-support distributions, Gaussians, the Gaussian-noise matrix
completion model and the fixed-design-free regression model on [-1, 1].
Singular cases return ``math.inf`` instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

__all__ = [
    "SharedVarGaussianPair",
    "as_distribution",
    "check_order",
    "clip_matrix",
    "hellinger_sq_from_renyi_half",
    "kl_discrete",
    "kl_gaussian",
    "kl_matrix_model",
    "renyi_discrete",
    "renyi_gaussian_shared_var",
    "renyi_matrix_model",
    "renyi_regression_model",
    "total_variation",
]

_SUM_TOL = 1e-12


def check_order(alpha: float, *, allow_one: bool = True) -> float:
    """Validate a Renyi order; ``alpha == 1`` means KL when allowed."""
    alpha = float(alpha)
    upper_ok = alpha <= 1.0 if allow_one else alpha < 1.0
    if not (alpha > 0.0 and upper_ok):
        bound = "(0, 1]" if allow_one else "(0, 1)"
        raise ValueError(f"Renyi order must lie in {bound}, got {alpha}")
    return alpha


def as_distribution(weights) -> np.ndarray:
    """Return ``weights`` as a float array after checking it is a probability vector."""
    p = np.asarray(weights, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("a discrete distribution must be a non-empty 1-d array")
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise ValueError("distribution weights must be finite and nonnegative")
    if abs(p.sum() - 1.0) > _SUM_TOL * max(1, p.size):
        raise ValueError(f"distribution weights sum to {p.sum()!r}, not 1")
    return p


def _pair(P, Q) -> tuple[np.ndarray, np.ndarray]:
    p, q = as_distribution(P), as_distribution(Q)
    if p.shape != q.shape:
        raise ValueError(f"support sizes differ: {p.size} vs {q.size}")
    return p, q


def kl_discrete(P, Q) -> float:
    """KL(P || Q) on a shared finite support, with 0 log 0 = 0."""
    p, q = _pair(P, Q)
    mask = p > 0
    if np.any(q[mask] == 0):
        return math.inf
    return float(max(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))), 0.0))


def renyi_discrete(P, Q, alpha: float) -> float:
    """Renyi divergence of order ``alpha`` between two finite distributions.

    ``alpha == 1`` falls back to :func:`kl_discrete`.  Mutually singular
    pairs give ``inf``.
    """
    alpha = check_order(alpha)
    if alpha == 1.0:
        return kl_discrete(P, Q)
    p, q = _pair(P, Q)
    mask = (p > 0) & (q > 0)
    if not np.any(mask):
        return math.inf
    log_terms = alpha * np.log(p[mask]) + (1.0 - alpha) * np.log(q[mask])
    value = logsumexp(log_terms) / (alpha - 1.0)
    return float(max(value, 0.0))


def total_variation(P, Q) -> float:
    p, q = _pair(P, Q)
    return 0.5 * float(np.abs(p - q).sum())


@dataclass(frozen=True)
class SharedVarGaussianPair:
    mu1: float
    mu2: float
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


def renyi_gaussian_shared_var(pair: SharedVarGaussianPair, alpha: float) -> float:
    """D_alpha(N(mu1, s2), N(mu2, s2)) = alpha (mu1 - mu2)^2 / (2 s2)."""
    alpha = check_order(alpha)
    return alpha * (pair.mu1 - pair.mu2) ** 2 / (2.0 * pair.sigma2)


def kl_gaussian(m1, S1, m2, S2) -> float:
    """KL(N(m1, S1) || N(m2, S2)) through Cholesky factors.

    The arguments are not symmetric: the expectation is under the first
    Gaussian.  Raises ``numpy.linalg.LinAlgError`` for non-PD covariances.
    """
    m1, m2 = np.atleast_1d(np.asarray(m1, float)), np.atleast_1d(np.asarray(m2, float))
    S1, S2 = np.atleast_2d(np.asarray(S1, float)), np.atleast_2d(np.asarray(S2, float))
    d = m1.size
    if m2.size != d or S1.shape != (d, d) or S2.shape != (d, d):
        raise ValueError("mean and covariance dimensions do not match")
    L1 = np.linalg.cholesky(S1)
    L2 = np.linalg.cholesky(S2)
    # tr(S2^{-1} S1) = ||L2^{-1} L1||_F^2
    A = linalg.solve_triangular(L2, L1, lower=True)
    z = linalg.solve_triangular(L2, m2 - m1, lower=True)
    logdet1 = 2.0 * np.sum(np.log(np.diag(L1)))
    logdet2 = 2.0 * np.sum(np.log(np.diag(L2)))
    kl = 0.5 * (np.sum(A * A) + z @ z - d + logdet2 - logdet1)
    return float(max(kl, 0.0))


def hellinger_sq_from_renyi_half(d_half: float) -> float:
    """Squared Hellinger distance 2[1 - exp(-D_{1/2}/2)] from D_{1/2}."""
    if d_half < 0 or math.isnan(d_half):
        raise ValueError("D_1/2 must be nonnegative")
    if math.isinf(d_half):
        return 2.0
    return -2.0 * math.expm1(-0.5 * d_half)


def _matrix_args(M, N) -> tuple[np.ndarray, np.ndarray]:
    M, N = np.asarray(M, float), np.asarray(N, float)
    if M.shape != N.shape:
        raise ValueError(f"matrix shapes differ: {M.shape} vs {N.shape}")
    return M, N


def renyi_matrix_model(M, N, sigma2: float, alpha: float) -> float:
    """d_{alpha,sigma}(M, N): Renyi divergence between uniform-cell Gaussian-noise models."""
    alpha = check_order(alpha)
    M, N = _matrix_args(M, N)
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if alpha == 1.0:
        return kl_matrix_model(M, N, sigma2)
    expo = alpha * (alpha - 1.0) * (M - N) ** 2 / (2.0 * sigma2)
    log_mean = logsumexp(expo) - math.log(expo.size)
    return float(max(log_mean / (alpha - 1.0), 0.0))


def kl_matrix_model(M, N, sigma2: float) -> float:
    M, N = _matrix_args(M, N)
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    return float(np.sum((M - N) ** 2) / (2.0 * sigma2 * M.size))


def clip_matrix(M, c: float) -> np.ndarray:
    """Entrywise truncation to [-c, c]."""
    if not c > 0:
        raise ValueError("clip level must be positive")
    return np.clip(np.asarray(M, float), -c, c)


def _gl_log_mean(g: np.ndarray, alpha: float, panels: int, order: int) -> float:
    # log of (1/2) * integral over [-1, 1] of exp(alpha (alpha - 1) g(x)^2 / 2)
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-1.0, 1.0, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    diff = np.asarray(g(x), dtype=float)
    if diff.shape != x.shape:
        diff = np.broadcast_to(diff, x.shape)
    if not np.all(np.isfinite(diff)):
        raise ValueError("non-finite function values on the quadrature grid")
    expo = alpha * (alpha - 1.0) * diff**2 / 2.0
    return float(logsumexp(expo, b=w) - math.log(2.0))


def renyi_regression_model(
    f: Callable[[np.ndarray], np.ndarray],
    f0: Callable[[np.ndarray], np.ndarray],
    alpha: float,
    quad_points: int = 64,
    *,
    rtol: float = 1e-8,
    max_points: int = 1 << 16,
) -> float:
    """Renyi divergence between regression models with uniform design on [-1, 1].

    Uses composite Gauss-Legendre with 8-point panels; the number of
    points is doubled until the relative change drops below ``rtol``.
    ``f`` and ``f0`` must accept numpy arrays.
    """
    alpha = check_order(alpha, allow_one=False)
    if quad_points < 16:
        raise ValueError("quad_points must be at least 16")
    order = 8

    def g(x):
        return np.asarray(f(x), float) - np.asarray(f0(x), float)

    points = quad_points
    prev = _gl_log_mean(g, alpha, max(1, points // order), order)
    while True:
        points *= 2
        cur = _gl_log_mean(g, alpha, max(1, points // order), order)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300) or points >= max_points:
            break
        prev = cur
    return float(max(cur / (alpha - 1.0), 0.0))
