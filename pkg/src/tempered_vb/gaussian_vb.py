"""Gaussian variational Bayes for tempered posteriors.

The variational parameter is ``x = (m, C)`` with covariance ``C C^T``.  The
objective for one standard-normal draw ``xi`` is

    f(x, xi) = -alpha * sum_i log p_theta(X_i) + log dPhi_{m, CC^T}/dpi (theta),
    theta = m + C xi,

with prior ``pi = N(0, vartheta^2 I)``.  Its expectation over ``xi`` is the
tempered VB objective up to a data-only constant.  :func:`svb_run` minimises it
by projected stochastic gradient descent with a constant step and iterate
averaging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from .divergences import kl_gaussian

__all__ = [
    "FAMILIES",
    "FeasibleSet",
    "GaussianLinearModel",
    "LikelihoodModel",
    "MCEstimate",
    "SgdConfig",
    "SvbResult",
    "VariationalGaussian",
    "default_x0",
    "expected_objective_linear_gaussian",
    "grad_objective_sample",
    "integrated_divergence_mc",
    "objective_sample",
    "project_feasible",
    "projected_sgd",
    "step_size",
    "svb_run",
]

FAMILIES = ("full", "diag", "iso")


class LikelihoodModel(Protocol):
    """Data-conditioned model: summed log-likelihood over the sample and its gradient."""

    def loglik(self, theta: np.ndarray) -> float: ...

    def grad_loglik(self, theta: np.ndarray) -> np.ndarray: ...


@dataclass
class VariationalGaussian:
    mean: np.ndarray
    factor: np.ndarray
    family: str = "full"

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        d = self.mean.size
        C = np.asarray(self.factor, dtype=float)
        if C.ndim == 0:
            C = float(C) * np.eye(d)
        if C.shape != (d, d):
            raise ValueError(f"factor must be {d}x{d}, got {C.shape}")
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.family == "diag" and np.any(C != np.diag(np.diag(C))):
            raise ValueError("diag family requires a diagonal factor")
        if self.family == "iso" and not np.allclose(C, C[0, 0] * np.eye(d), rtol=0, atol=1e-14):
            raise ValueError("iso family requires a multiple of the identity")
        self.factor = C

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def cov(self) -> np.ndarray:
        return self.factor @ self.factor.T

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.mean, self.factor.ravel()])

    @classmethod
    def from_vector(cls, x: np.ndarray, d: int, family: str = "full") -> "VariationalGaussian":
        x = np.asarray(x, dtype=float)
        return cls(x[:d].copy(), x[d:].reshape(d, d).copy(), family)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        xi = rng.standard_normal((size, self.dim))
        return self.mean + xi @ self.factor.T

    def kl_to_prior(self, prior_variance: float) -> float:
        d = self.dim
        return kl_gaussian(self.mean, self.cov, np.zeros(d), prior_variance * np.eye(d))


@dataclass(frozen=True)
class FeasibleSet:
    """Euclidean ball of radius ``ball_radius`` intersected with {C C^T >= psd_floor I}."""

    ball_radius: float
    psd_floor: float = 0.0

    def __post_init__(self):
        if not self.ball_radius > 0:
            raise ValueError("ball_radius must be positive")
        if self.psd_floor < 0:
            raise ValueError("psd_floor must be nonnegative")

    def check_floor(self, n: int, d: int) -> None:
        """The floor must not exclude the rate-optimal variance 1/(n sqrt(d))."""
        if self.psd_floor > 1.0 / (n * math.sqrt(d)):
            raise ValueError(
                f"psd_floor {self.psd_floor} exceeds 1/(n sqrt(d)) = {1.0 / (n * math.sqrt(d))}"
            )


@dataclass(frozen=True)
class SgdConfig:
    T: int
    L: Optional[float] = None
    step_override: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.L is not None and not self.L > 0:
            raise ValueError("L must be positive")
        if self.step_override is not None and not self.step_override > 0:
            raise ValueError("step_override must be positive")


@dataclass
class GaussianLinearModel:
    """y_i = z_i^T theta + N(0, noise_variance); used where E_q[log-lik] is analytic."""

    Z: np.ndarray
    y: np.ndarray
    noise_variance: float = 1.0

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    @property
    def n(self) -> int:
        return self.y.size

    def loglik(self, theta):
        r = self.y - self.Z @ theta
        n = self.y.size
        return float(-0.5 * r @ r / self.noise_variance - 0.5 * n * math.log(2 * math.pi * self.noise_variance))

    def grad_loglik(self, theta):
        return self.Z.T @ (self.y - self.Z @ theta) / self.noise_variance

    def expected_loglik(self, q: VariationalGaussian) -> float:
        r = self.y - self.Z @ q.mean
        n = self.y.size
        quad = r @ r + np.sum((self.Z @ q.factor) ** 2)
        return float(-0.5 * quad / self.noise_variance - 0.5 * n * math.log(2 * math.pi * self.noise_variance))


def expected_objective_linear_gaussian(
    q: VariationalGaussian, model: GaussianLinearModel, prior_variance: float, alpha: float
) -> float:
    """alpha * E_q[-loglik] + KL(q, prior), in closed form."""
    return -alpha * model.expected_loglik(q) + q.kl_to_prior(prior_variance)


def _as_q(x) -> VariationalGaussian:
    if isinstance(x, VariationalGaussian):
        return x
    m, C = x
    return VariationalGaussian(m, C)


def objective_sample(x, xi, model: LikelihoodModel, prior_variance: float, alpha: float) -> float:
    """f((m, C), xi) evaluated at theta = m + C xi."""
    q = _as_q(x)
    m, C = q.mean, q.factor
    xi = np.asarray(xi, dtype=float)
    d = m.size
    theta = m + C @ xi
    sign, logabsdet = np.linalg.slogdet(C)
    if sign == 0 or not np.isfinite(logabsdet):
        raise np.linalg.LinAlgError("singular variational factor C")
    u = np.linalg.solve(C, theta - m)
    log_q = -0.5 * d * math.log(2 * math.pi) - logabsdet - 0.5 * u @ u
    log_prior = -0.5 * d * math.log(2 * math.pi * prior_variance) - 0.5 * theta @ theta / prior_variance
    like = model.loglik(theta) if alpha != 0 else 0.0
    return float(-alpha * like + log_q - log_prior)


def grad_objective_sample(
    x, xi, model: LikelihoodModel, prior_variance: float, alpha: float
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of :func:`objective_sample` in (m, C) for fixed ``xi``.

    With theta = m + C xi the log-density of q at theta equals
    -log|det C| - |xi|^2/2 + const, so only the log-determinant contributes
    through C besides the chain rule: grad_C = g xi^T - C^{-T}.
    """
    q = _as_q(x)
    m, C = q.mean, q.factor
    xi = np.asarray(xi, dtype=float)
    theta = m + C @ xi
    g = theta / prior_variance
    if alpha != 0:
        g = g - alpha * np.asarray(model.grad_loglik(theta), dtype=float)
    try:
        inv_t = np.linalg.inv(C).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular variational factor C") from exc
    return g, np.outer(g, xi) - inv_t


def _restrict_to_family(gC: np.ndarray, family: str) -> np.ndarray:
    if family == "full":
        return gC
    if family == "diag":
        return np.diag(np.diag(gC))
    d = gC.shape[0]
    return (np.trace(gC) / d) * np.eye(d)


def project_feasible(x, fs: FeasibleSet):
    """Project (m, C) onto the feasible set: ball first, then eigenvalue floor.

    The floor replaces C by the symmetric square root of C C^T with its
    eigenvalues raised to at least ``psd_floor``; it is skipped when already
    satisfied.  If the floor pushes the point back outside the ball, only the
    mean is shrunk, so the output satisfies both constraints whenever the
    floored factor alone fits in the ball.  This composite map is an
    approximation of the exact joint Euclidean projection.
    """
    q = _as_q(x)
    m, C = q.mean.copy(), q.factor.copy()
    B = fs.ball_radius
    norm = math.sqrt(m @ m + np.sum(C * C))
    if norm > B:
        m *= B / norm
        C *= B / norm
    if fs.psd_floor > 0:
        S = C @ C.T
        S = 0.5 * (S + S.T)
        lam, V = np.linalg.eigh(S)
        if lam[0] < fs.psd_floor * (1 - 1e-12):
            lam = np.maximum(lam, fs.psd_floor)
            C = (V * np.sqrt(lam)) @ V.T
            C = 0.5 * (C + C.T)
            if q.family != "full":
                C = np.diag(np.diag(C)) if q.family == "diag" else np.mean(np.diag(C)) * np.eye(m.size)
            cn2 = np.sum(C * C)
            mn2 = m @ m
            if mn2 + cn2 > B * B and mn2 > 0:
                m *= math.sqrt(max(B * B - cn2, 0.0) / mn2)
    return VariationalGaussian(m, C, q.family)


def step_size(B: float, L: float, T: int) -> float:
    """Constant step B / (L sqrt(2T))."""
    if not (B > 0 and L > 0 and T > 0):
        raise ValueError("B, L and T must be positive")
    return B / (L * math.sqrt(2.0 * T))


def projected_sgd(
    grad: Callable[[np.ndarray, object], np.ndarray],
    x0: np.ndarray,
    project: Callable[[np.ndarray], np.ndarray],
    step: float,
    T: int,
    draw: Callable[[], object] = lambda: None,
    keep_iterates: bool = False,
):
    """x_t = project(x_{t-1} - step * grad(x_{t-1}, xi_t)); returns the average of x_1..x_T.

    Returns ``(x_bar, iterates)`` where ``iterates`` is a list when
    ``keep_iterates`` is set and ``None`` otherwise.
    """
    x = np.asarray(x0, dtype=float).copy()
    total = np.zeros_like(x)
    iterates = [] if keep_iterates else None
    for _ in range(T):
        g = np.asarray(grad(x, draw()), dtype=float)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite stochastic gradient")
        x = project(x - step * g)
        total += x
        if keep_iterates:
            iterates.append(x.copy())
    return total / T, iterates


def default_x0(d: int, n: int, family: str = "full") -> VariationalGaussian:
    """Zero mean and isotropic variance 1/(n sqrt(d))."""
    s = 1.0 / math.sqrt(n * math.sqrt(d))
    return VariationalGaussian(np.zeros(d), s * np.eye(d), family)


@dataclass
class SvbResult:
    q: VariationalGaussian
    trace: np.ndarray
    step: float
    iterates: Optional[list] = field(default=None, repr=False)


def svb_run(
    model: LikelihoodModel,
    prior_variance: float,
    alpha: float,
    fs: FeasibleSet,
    cfg: SgdConfig,
    x0: Optional[VariationalGaussian] = None,
    *,
    n: Optional[int] = None,
    family: Optional[str] = None,
    keep_iterates: bool = False,
) -> SvbResult:
    """Stochastic variational Bayes: projected SGD on f with iterate averaging.

    ``trace[t]`` is the single-draw objective estimate f(x_{t-1}, xi_t).
    The run is a deterministic function of ``cfg.seed``.
    """
    if x0 is None:
        x0 = default_x0(model.dim, n if n is not None else model.n, family or "full")
    fam = family or x0.family
    x0 = VariationalGaussian(x0.mean, x0.factor, fam)
    d = x0.dim
    if cfg.step_override is not None:
        gamma = cfg.step_override
    else:
        if cfg.L is None:
            raise ValueError("SgdConfig.L is required unless step_override is set")
        gamma = step_size(fs.ball_radius, cfg.L, cfg.T)
    rng = np.random.default_rng(cfg.seed)
    trace = np.empty(cfg.T)
    counter = iter(range(cfg.T))

    def grad(xv, xi):
        q = VariationalGaussian.from_vector(xv, d, "full")
        t = next(counter)
        trace[t] = objective_sample(q, xi, model, prior_variance, alpha)
        gm, gC = grad_objective_sample(q, xi, model, prior_variance, alpha)
        return np.concatenate([gm, _restrict_to_family(gC, fam).ravel()])

    def project(xv):
        return project_feasible(VariationalGaussian.from_vector(xv, d, fam), fs).to_vector()

    x_bar, iterates = projected_sgd(
        grad,
        x0.to_vector(),
        project,
        gamma,
        cfg.T,
        draw=lambda: rng.standard_normal(d),
        keep_iterates=keep_iterates,
    )
    q_bar = VariationalGaussian.from_vector(x_bar, d, fam)
    return SvbResult(q_bar, trace, gamma, iterates)


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    std_error: float
    offending: Optional[np.ndarray] = None


def integrated_divergence_mc(
    q: VariationalGaussian,
    divergence: Callable[[np.ndarray], float],
    samples: int,
    seed: int,
    *,
    vectorized: bool = False,
) -> MCEstimate:
    """Monte Carlo mean and standard error of ``divergence(theta)`` under theta ~ q.

    With ``vectorized`` the callable receives all draws as an (S, d) array.
    An infinite value ends the estimate and returns the offending draw.
    """
    if samples < 100:
        raise ValueError("use at least 100 samples")
    rng = np.random.default_rng(seed)
    thetas = q.sample(rng, samples)
    if vectorized:
        vals = np.asarray(divergence(thetas), dtype=float)
    else:
        vals = np.array([divergence(t) for t in thetas], dtype=float)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        return MCEstimate(math.inf, math.inf, thetas[bad[0]])
    return MCEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples)))
