"""Model-selection VB for nonparametric regression on [-1, 1].

Data: W ~ U[-1, 1], Y = f(W) + N(0, 1).  The prior draws a truncation level K
with mass 2^-K and i.i.d. N(0, 1) coefficients on the trigonometric basis.
The variational family on level K is N(m, s^2 I); the fit on each level is a
ridge regression with a closed-form shared variance, and the level is
chosen by minimising the tempered objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import zeta

__all__ = [
    "RegVBState",
    "RegressionDataset",
    "SobolevFunction",
    "SobolevSpec",
    "clip_function",
    "default_K_max",
    "design_matrix",
    "fit_for_K",
    "integrated_l2_error",
    "objective",
    "prior_log_mass_K",
    "quadrature_grid",
    "rate_target",
    "read_dataset",
    "sample_regression",
    "select_K",
    "sobolev_truth",
    "trig_basis",
    "write_dataset",
]


def trig_basis(k: int, t):
    """phi_1 = 1, phi_{2j} = cos(pi j t), phi_{2j+1} = sin(pi j t)."""
    if k < 1:
        raise ValueError("basis index starts at 1")
    t = np.asarray(t, dtype=float)
    if k == 1:
        return np.ones_like(t)
    j = k // 2
    return np.cos(math.pi * j * t) if k % 2 == 0 else np.sin(math.pi * j * t)


def design_matrix(w, K: int) -> np.ndarray:
    """n x K matrix with entries phi_k(w_i)."""
    w = np.asarray(w, dtype=float).ravel()
    Phi = np.empty((w.size, K))
    Phi[:, 0] = 1.0
    j = np.arange(1, K // 2 + 1)
    arg = math.pi * w[:, None] * j[None, :]
    Phi[:, 1::2] = np.cos(arg)[:, : len(range(1, K, 2))]
    Phi[:, 2::2] = np.sin(arg)[:, : len(range(2, K, 2))]
    return Phi


def prior_log_mass_K(k: int) -> float:
    if k < 1:
        raise ValueError("K starts at 1")
    return -k * math.log(2.0)


@dataclass(frozen=True)
class RegressionDataset:
    w: np.ndarray
    y: np.ndarray
    noise_variance: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if w.size != y.size:
            raise ValueError("w and y must have equal length")
        if np.any(np.abs(w) > 1.0):
            raise ValueError("design points must lie in [-1, 1]")
        if self.noise_variance != 1.0:
            raise ValueError("the noise variance is fixed at 1")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class RegVBState:
    K: int
    coef_means: np.ndarray
    shared_variance: float
    objective: float

    def function(self) -> Callable[[np.ndarray], np.ndarray]:
        """The posterior mean function sum_k m_k phi_k."""
        return lambda x: design_matrix(x, self.K) @ self.coef_means


def objective(m, s2: float, data: RegressionDataset, alpha: float, Phi: Optional[np.ndarray] = None) -> float:
    """Tempered objective on level K = len(m), data-independent constants dropped."""
    m = np.asarray(m, dtype=float)
    K = m.size
    if Phi is None:
        Phi = design_matrix(data.w, K)
    resid = data.y - Phi @ m
    return float(
        0.5 * alpha * resid @ resid
        + 0.5 * s2 * alpha * np.sum(Phi * Phi)
        + 0.5 * np.sum(math.log(1.0 / s2) + s2 + m * m - 1.0)
        + K * math.log(2.0)
    )


def fit_for_K(data: RegressionDataset, alpha: float, K: int) -> RegVBState:
    """Exact minimiser over (m, s^2) on level K.

    m = alpha (alpha Phi^T Phi + I)^{-1} Phi^T Y and
    s^2 = K / (alpha sum_{i,k} phi_k(W_i)^2 + K).
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if data.n < 1:
        raise ValueError("empty dataset")
    Phi = design_matrix(data.w, K)
    G = alpha * (Phi.T @ Phi) + np.eye(K)
    m = np.linalg.solve(G, alpha * (Phi.T @ data.y))
    s2 = K / (alpha * float(np.sum(Phi * Phi)) + K)
    return RegVBState(K, m, s2, objective(m, s2, data, alpha, Phi))


def default_K_max(n: int) -> int:
    return 4 * math.ceil((n / math.log(n)) ** (1.0 / 3.0))


def select_K(data: RegressionDataset, alpha: float, K_max: Optional[int] = None) -> RegVBState:
    """Fit every level 1..K_max and keep the smallest objective; ties go to smaller K."""
    if K_max is None:
        K_max = default_K_max(max(data.n, 3))
    if K_max < 1:
        raise ValueError("K_max must be at least 1")
    best = None
    for K in range(1, K_max + 1):
        fit = fit_for_K(data, alpha, K)
        if best is None or fit.objective < best.objective:
            best = fit
    return best


@dataclass(frozen=True)
class SobolevSpec:
    """Ellipsoid sum_k k^(2r) beta_k^2 <= C2 and a rule for the truth's coefficients.

    Without ``coef_rule`` the coefficients are c k^-(r+1), scaled to fill 90%
    of the ellipsoid.
    """

    r: float
    C2: float
    coef_rule: Optional[Callable[[np.ndarray], np.ndarray]] = None
    tol: float = 1e-12
    max_terms: int = 1_000_000

    def __post_init__(self):
        if self.r < 2:
            raise ValueError("smoothness r must be at least 2")
        if not self.C2 > 0:
            raise ValueError("C2 must be positive")


@dataclass(frozen=True)
class SobolevFunction:
    coefs: np.ndarray = field(repr=False)

    def __call__(self, x):
        """Evaluate via Horner's rule in exp(i pi x)."""
        x = np.asarray(x, dtype=float)
        c = self.coefs
        out = np.full(x.shape, c[0])
        J = c.size // 2
        if J == 0:
            return out
        a = np.zeros(J + 1, dtype=complex)
        cos_part = c[1::2]
        sin_part = c[2::2]
        a[1 : cos_part.size + 1] += cos_part
        a[1 : sin_part.size + 1] -= 1j * sin_part
        z = np.exp(1j * math.pi * x)
        acc = np.zeros(x.shape, dtype=complex)
        for coef in a[:0:-1]:
            acc = (acc + coef) * z
        return out + acc.real

    @property
    def sup_bound(self) -> float:
        return float(np.sum(np.abs(self.coefs)))

    def ellipsoid_norm(self, r: float) -> float:
        k = np.arange(1, self.coefs.size + 1, dtype=float)
        return float(np.sum(k ** (2 * r) * self.coefs**2))


def sobolev_truth(spec: SobolevSpec) -> SobolevFunction:
    if spec.coef_rule is None:
        c = math.sqrt(0.9 * spec.C2 / float(zeta(2.0)))
        last = int(math.floor((c / spec.tol) ** (1.0 / (spec.r + 1.0))))
        k = np.arange(1, min(last, spec.max_terms) + 1, dtype=float)
        coefs = c * k ** (-(spec.r + 1.0))
    else:
        k = np.arange(1, spec.max_terms + 1, dtype=float)
        coefs = np.asarray(spec.coef_rule(k), dtype=float)
        keep = np.flatnonzero(np.abs(coefs) >= spec.tol)
        coefs = coefs[: keep[-1] + 1] if keep.size else coefs[:1] * 0.0
    f0 = SobolevFunction(coefs)
    if f0.ellipsoid_norm(spec.r) > spec.C2 * (1 + 1e-12):
        raise ValueError("coefficient rule leaves the Sobolev ellipsoid")
    return f0


def rate_target(n: float, r: float) -> float:
    """(log n / n)^(2r/(2r+1))."""
    if n < 3:
        raise ValueError("n must be at least 3")
    return (math.log(n) / n) ** (2.0 * r / (2.0 * r + 1.0))


def clip_function(f: Callable, c0: float) -> Callable:
    if not c0 > 0:
        raise ValueError("clip level must be positive")
    return lambda x: np.clip(np.asarray(f(x), dtype=float), -c0, c0)


def sample_regression(f0: Callable, n: int, seed: int) -> RegressionDataset:
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, n)
    return RegressionDataset(w, np.asarray(f0(w)) + rng.standard_normal(n))


def quadrature_grid(panels: int = 256, order: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on [-1, 1]."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-1.0, 1.0, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * nodes).ravel()
    w = (half[:, None] * weights).ravel()
    return x, w


def integrated_l2_error(
    state: RegVBState,
    f0: Callable,
    c0: Optional[float],
    samples: int,
    rng: np.random.Generator,
    *,
    f0_grid: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None,
) -> float:
    """Monte Carlo over the VB posterior of the quadrature value of ||clip(f) - f0||_2^2.

    ``f0_grid`` may carry a precomputed (nodes, weights, f0(nodes)) triple.
    With ``c0=None`` no clipping is applied.
    """
    if f0_grid is None:
        x, w = quadrature_grid()
        f0x = np.asarray(f0(x), dtype=float)
    else:
        x, w, f0x = f0_grid
    Phi = design_matrix(x, state.K)
    betas = state.coef_means + math.sqrt(state.shared_variance) * rng.standard_normal((samples, state.K))
    fx = betas @ Phi.T
    if c0 is not None:
        fx = np.clip(fx, -c0, c0)
    return float(np.mean(((fx - f0x) ** 2) @ w))


def write_dataset(data: RegressionDataset, path: Union[str, Path]) -> None:
    """Header line ``n`` then one ``w y`` pair per line."""
    lines = [str(data.n)] + [f"{float(w)!r} {float(y)!r}" for w, y in zip(data.w, data.y)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path: Union[str, Path]) -> RegressionDataset:
    rows = [ln.split() for ln in Path(path).read_text().split("\n") if ln.strip()]
    if not rows or len(rows[0]) != 1:
        raise ValueError("first line must hold the sample size")
    n = int(rows[0][0])
    body = rows[1:]
    if len(body) != n:
        raise ValueError(f"header announces {n} points, found {len(body)}")
    arr = np.array(body, dtype=float).reshape(n, 2)
    return RegressionDataset(arr[:, 0], arr[:, 1])
