"""Experiment pipelines, replication loop, rate sweeps and report persistence."""

from __future__ import annotations

import functools
import math
import os
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .. import __version__
from ..divergences import (
    SharedVarGaussianPair,
    renyi_discrete,
    renyi_gaussian_shared_var,
    renyi_matrix_model,
    total_variation,
)
from ..gaussian_vb import FeasibleSet, SgdConfig, integrated_divergence_mc, svb_run
from ..logistic_model import (
    logistic_rate,
    estimate_stats,
    renyi_logistic,
    sample_design,
    svb_expectation_bound,
)
from ..matrix_completion import (
    FreeEnergyIncrease,
    PriorHyper,
    cavi_run,
    default_b,
    posterior_mean_matrix,
    sample_matrices,
    synth_lowrank,
)
from ..nonparam_regression import (
    SobolevSpec,
    quadrature_grid,
    integrated_l2_error,
    rate_target,
    sample_regression,
    select_K,
    sobolev_truth,
)
from ..tempered_core import matrix_bound_rhs
from .config import ConfigError, ExperimentConfig, replication_seed
from .mixture import fit_uniform_box, likelihood_probe, mixture_bound, sample_mixture
from .report import RunReport

__all__ = [
    "InvariantViolation",
    "OUTPUT_DIR_ENV",
    "divergence_property_checks",
    "gaussian_quadrature_check",
    "loglog_slope",
    "rate_sweep",
    "run_experiment",
    "run_mixture_demo",
]

OUTPUT_DIR_ENV = "TEMPERED_VB_OUTPUT_DIR"


class InvariantViolation(RuntimeError):
    """A run detected a broken algorithmic invariant."""


# ---------------------------------------------------------------- divergences


def gaussian_quadrature_check(mu_gaps, sigma2s, alphas) -> float:
    """Largest |closed form - quadrature| for D_alpha between equal-variance Gaussians."""
    worst = 0.0
    for gap in mu_gaps:
        for s2 in sigma2s:
            for a in alphas:
                s = math.sqrt(s2)
                centre = (1.0 - a) * gap

                def integrand(x):
                    e1 = -0.5 * (x - gap) ** 2 / s2
                    e2 = -0.5 * x**2 / s2
                    return math.exp(a * e1 + (1 - a) * e2) / math.sqrt(2 * math.pi * s2)

                val, _ = integrate.quad(
                    integrand, centre - 40 * s, centre + 40 * s, epsabs=0.0, epsrel=1e-13, limit=200
                )
                quad = math.log(val) / (a - 1.0)
                exact = renyi_gaussian_shared_var(SharedVarGaussianPair(gap, 0.0, s2), a)
                worst = max(worst, abs(quad - exact))
    return worst


def divergence_property_checks(rng: np.random.Generator, pairs: int, support: int) -> dict[str, int]:
    """Violation counts of the order and product properties on random discrete pairs."""
    tol = 1e-10
    counts = {"monotone": 0, "sandwich": 0, "pinsker": 0, "additivity": 0}
    for _ in range(pairs):
        P, Q = rng.dirichlet(np.ones(support), size=2)
        a, b = np.sort(rng.uniform(0.01, 0.99, size=2))
        Da, Db = renyi_discrete(P, Q, a), renyi_discrete(P, Q, b)
        if Da > Db + tol:
            counts["monotone"] += 1
        if not (a / b) * (1 - b) / (1 - a) * Db <= Da + tol:
            counts["sandwich"] += 1
        if 0.5 * a * total_variation(P, Q) ** 2 > Da + tol:
            counts["pinsker"] += 1
        P2, Q2 = rng.dirichlet(np.ones(support), size=2)
        joint = renyi_discrete(np.outer(P, P2).ravel(), np.outer(Q, Q2).ravel(), a)
        if abs(joint - Da - renyi_discrete(P2, Q2, a)) > 1e-9 * max(1.0, joint):
            counts["additivity"] += 1
    return counts


def _divergence_record(cfg: ExperimentConfig, seed: int) -> dict[str, Any]:
    p = cfg.params
    dev = gaussian_quadrature_check(p["mu_gaps"], p["sigma2s"], p["alphas"])
    counts = divergence_property_checks(np.random.default_rng(seed), p["discrete_pairs"], p["support"])
    return {"max_deviation": dev, **{f"violations_{k}": v for k, v in counts.items()}}


# ---------------------------------------------------------------- logistic


def _logistic_record(cfg: ExperimentConfig, rep: int) -> dict[str, Any]:
    p = cfg.params
    d, n, th2 = p["d"], p["n"], p["prior_variance"]
    seed = lambda j: replication_seed(cfg.seed, rep, n, j)
    theta0 = np.zeros(d)
    theta0[0] = p["theta0_norm"]
    model = sample_design(p["design"], d, n, seed(0), theta0)
    psi = p["psd_floor"] if p["psd_floor"] is not None else 1.0 / (n * math.sqrt(d))
    stats = estimate_stats(model, psi, d, th2, p["family"])
    B = p["B"] if p["B"] is not None else float(np.linalg.norm(theta0)) + 1.0
    T = p["T"] if p["T"] is not None else math.ceil(math.sqrt(n)) * 10
    res = svb_run(
        model, th2, cfg.alpha, FeasibleSet(B, psi),
        SgdConfig(T=T, L=stats.smoothness_L, seed=seed(1)), n=n, family=p["family"],
    )
    Z_ref = sample_design(p["design"], d, p["z_ref"], seed(2)).Z
    est = integrated_divergence_mc(
        res.q, lambda th: renyi_logistic(th, theta0, cfg.alpha, Z_ref),
        p["mc_samples"], seed(3), vectorized=True,
    )
    eps_n = logistic_rate(stats, d, n, float(np.linalg.norm(theta0)), th2)
    bound = svb_expectation_bound(B, stats.smoothness_L, T, n, cfg.alpha, eps_n)
    return {
        "n": n,
        "estimate": est.estimate,
        "std_error": est.std_error,
        "bound": bound,
        "eps_n": eps_n,
        "K1": stats.K1,
        "K2": stats.K2,
        "L": stats.smoothness_L,
        "B": B,
        "T": T,
        "step": res.step,
        "q_mean": res.q.mean,
        "q_cov_diag": np.diag(res.q.cov),
    }


# ---------------------------------------------------------------- matrix completion


def _matcomp_record(cfg: ExperimentConfig, rep: int) -> dict[str, Any]:
    p = cfg.params
    m, q, n = p["m"], p["p"], p["n"]
    seed = lambda j: replication_seed(cfg.seed, rep, n, j)
    M0, data = synth_lowrank(m, q, p["r"], p["B"], p["sigma2"], n, seed(0))
    b = p["b"] if p["b"] is not None else default_b(p["B"], n, m, q, p["K"])
    hyper = PriorHyper(K=p["K"], a=p["a"], b=b, B=p["B"])
    try:
        state, trace = cavi_run(data, hyper, cfg.alpha, p["sweeps"], seed(1), scaling=p["scaling"])
    except FreeEnergyIncrease as exc:
        raise InvariantViolation(str(exc)) from exc
    Ms = sample_matrices(state, np.random.default_rng(seed(2)), p["mc_samples"])
    clipped = np.sum((np.clip(Ms, -p["clip"], p["clip"]) - M0) ** 2, axis=(1, 2))
    mean_matrix = posterior_mean_matrix(state)
    return {
        "n": n,
        "d_alpha_sigma": renyi_matrix_model(mean_matrix, M0, p["sigma2"], cfg.alpha),
        "bound": matrix_bound_rhs(p["r"], m, q, n, p["a"], cfg.alpha, 0.0, p["B"], p["sigma2"]),
        "clipped_sq_frobenius": float(clipped.mean()),
        "clipped_sq_frobenius_se": float(clipped.std(ddof=1) / math.sqrt(clipped.size)),
        "mean_sq_frobenius": float(np.sum((mean_matrix - M0) ** 2)),
        "b": b,
        "free_energy_initial": float(trace[0]),
        "free_energy_final": float(trace[-1]),
        "sweeps_run": int(trace.size - 1),
    }


# ---------------------------------------------------------------- regression


@functools.lru_cache(maxsize=8)
def _truth_and_grid(r: float, C2: float):
    f0 = sobolev_truth(SobolevSpec(r, C2))
    x, w = quadrature_grid()
    return f0, (x, w, f0(x))


def _regression_record(cfg: ExperimentConfig, rep: int) -> dict[str, Any]:
    p = cfg.params
    n = p["n"]
    seed = lambda j: replication_seed(cfg.seed, rep, n, j)
    f0, grid = _truth_and_grid(float(p["r"]), float(p["C2"]))
    data = sample_regression(f0, n, seed(0))
    fit = select_K(data, cfg.alpha, p["K_max"])
    err = integrated_l2_error(
        fit, f0, f0.sup_bound, p["mc_samples"], np.random.default_rng(seed(1)), f0_grid=grid
    )
    return {
        "n": n,
        "K": fit.K,
        "shared_variance": fit.shared_variance,
        "objective": fit.objective,
        "error": err,
        "target": rate_target(n, p["r"]),
    }


# ---------------------------------------------------------------- mixture


def _mixture_record(cfg: ExperimentConfig, rep: int) -> dict[str, Any]:
    p = cfg.params
    n, m0, s0 = p["n"], p["m0"], p["sigma0_sq"]
    x = sample_mixture(n, m0, s0, np.random.default_rng(replication_seed(cfg.seed, rep, 0)))
    i, probe = likelihood_probe(x, tuple(p["probe"]))
    fit = fit_uniform_box(
        x, cfg.alpha, np.random.default_rng(replication_seed(cfg.seed, rep, 1)),
        mc_samples=p["mc_samples"], order=p["quad_order"], starts=p["starts"],
    )
    box = fit.box
    return {
        "probe_index": i,
        "probe_point": float(x[i]),
        "probe_loglik": probe,
        "probe_increasing": bool(np.all(np.diff(probe) > 0)),
        "a_hat": box.a,
        "b_hat": box.b,
        "c_hat": box.c,
        "d_hat": box.d,
        "center_sigma2": box.center[1],
        "center_error": abs(box.a - m0),
        "objective": fit.objective,
        "objective_se": fit.objective_se,
        "evaluations": fit.evaluations,
        "bound": mixture_bound(n, m0, s0, cfg.alpha),
    }


_PIPELINES: dict[str, Callable[[ExperimentConfig, int], dict[str, Any]]] = {
    "logistic": _logistic_record,
    "matcomp": _matcomp_record,
    "regression": _regression_record,
    "mixture": _mixture_record,
    "divergence-check": lambda cfg, rep: _divergence_record(cfg, replication_seed(cfg.seed, rep)),
}


# ---------------------------------------------------------------- summaries


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def _summarise(kind: str, records: list[dict[str, Any]]) -> dict[str, Any]:
    col = lambda k: [r[k] for r in records]
    if kind == "logistic":
        mean, se = _mean_se(col("estimate"))
        bound = float(np.mean(col("bound")))
        return {"mean_estimate": mean, "se_estimate": se, "mean_bound": bound, "within_bound": mean <= bound}
    if kind == "matcomp":
        mean, se = _mean_se(col("d_alpha_sigma"))
        bound = float(np.mean(col("bound")))
        return {
            "mean_d_alpha_sigma": mean,
            "se_d_alpha_sigma": se,
            "bound": bound,
            "within_bound": mean <= bound,
            "median_clipped_sq_frobenius": float(np.median(col("clipped_sq_frobenius"))),
        }
    if kind == "regression":
        mean, se = _mean_se(col("error"))
        return {"mean_error": mean, "se_error": se, "median_K": float(np.median(col("K"))),
                "target": records[0]["target"]}
    if kind == "mixture":
        return {
            "all_probes_increasing": all(col("probe_increasing")),
            "probes_increasing": int(sum(col("probe_increasing"))),
            "max_center_error": float(max(col("center_error"))),
            "mean_a_hat": float(np.mean(col("a_hat"))),
            "mean_center_sigma2": float(np.mean(col("center_sigma2"))),
            "bound": records[0]["bound"],
        }
    return {
        "max_deviation": float(max(col("max_deviation"))),
        "violations": int(sum(sum(v for k, v in r.items() if k.startswith("violations_")) for r in records)),
    }


_ERROR_KEY = {"logistic": "estimate", "matcomp": "clipped_sq_frobenius", "regression": "error"}
_TARGET_KEY = {"logistic": "eps_n", "regression": "target"}


def loglog_slope(targets: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(target)."""
    x, y = np.log(np.asarray(targets, float)), np.log(np.asarray(errors, float))
    if x.size < 2 or np.ptp(x) == 0:
        raise ValueError("need at least two distinct targets")
    return float(np.polyfit(x, y, 1)[0])


def _target_for(cfg: ExperimentConfig, records) -> float:
    if cfg.kind == "matcomp":
        p = cfg.params
        n = records[0]["n"]
        return p["r"] * (p["m"] + p["p"]) * math.log(n * p["m"] * p["p"]) / n
    return float(np.mean([r[_TARGET_KEY[cfg.kind]] for r in records]))


# ---------------------------------------------------------------- drivers


def _output_path(cfg: ExperimentConfig, out: Optional[str]) -> tuple[Optional[Path], Optional[str]]:
    target = out if out is not None else cfg.output
    override = os.environ.get(OUTPUT_DIR_ENV)
    if override:
        name = Path(target).name if target else f"{cfg.kind}-report.json"
        return Path(override) / name, override
    return (Path(target) if target else None), None


def _replicate(cfg: ExperimentConfig) -> list[dict[str, Any]]:
    pipeline = _PIPELINES[cfg.kind]
    records = []
    for rep in range(cfg.reps):
        t0 = time.perf_counter()
        rec = {"rep": rep, **pipeline(cfg, rep)}
        rec["runtime_s"] = time.perf_counter() - t0
        records.append(rec)
    return records


def _finish(report: RunReport, path: Optional[Path]) -> RunReport:
    if path is not None:
        try:
            report.write(path)
        except OSError as exc:
            raise OSError(f"cannot write report to {path}: {exc}") from exc
    return report


def run_experiment(cfg: ExperimentConfig, out: Optional[str] = None) -> RunReport:
    """Run ``cfg.reps`` seeded replications and write the report if an output path is known.

    A config with ``n_grid`` is handed to :func:`rate_sweep`.
    """
    if cfg.n_grid is not None:
        return rate_sweep(cfg, out)
    if cfg.kind == "mixture":
        return run_mixture_demo(cfg, out)
    path, override = _output_path(cfg, out)
    t0 = time.perf_counter()
    records = _replicate(cfg)
    summary = _summarise(cfg.kind, records)
    summary["runtime_s"] = time.perf_counter() - t0
    report = RunReport(cfg.kind, cfg.to_dict(), records, summary, __version__, override)
    return _finish(report, path)


def run_mixture_demo(cfg: ExperimentConfig, out: Optional[str] = None) -> RunReport:
    if cfg.kind != "mixture":
        raise ConfigError("kind", f"run_mixture_demo needs kind 'mixture', got {cfg.kind!r}")
    path, override = _output_path(cfg, out)
    t0 = time.perf_counter()
    records = _replicate(cfg)
    summary = _summarise("mixture", records)
    summary["runtime_s"] = time.perf_counter() - t0
    return _finish(RunReport("mixture", cfg.to_dict(), records, summary, __version__, override), path)


def rate_sweep(cfg: ExperimentConfig, out: Optional[str] = None, *, bootstrap: int = 1000) -> RunReport:
    """Run the experiment at every n of ``cfg.n_grid`` and fit the log-log rate slope.

    Records from all grid points are concatenated (``reps * len(n_grid)`` of
    them).  The slope interval is a percentile bootstrap over replications,
    resampled independently at each n.
    """
    if cfg.n_grid is None:
        raise ConfigError("n_grid", "a rate sweep needs an n grid")
    if cfg.kind not in _ERROR_KEY:
        raise ConfigError("kind", f"rate sweeps are not defined for kind {cfg.kind!r}")
    path, override = _output_path(cfg, out)
    t0 = time.perf_counter()
    key = _ERROR_KEY[cfg.kind]
    records, per_n = [], []
    for n in cfg.n_grid:
        sub = replace(cfg, n_grid=None, params={**cfg.params, "n": n})
        recs = _replicate(sub)
        records.extend(recs)
        per_n.append((n, _target_for(sub, recs), np.array([r[key] for r in recs], dtype=float), _summarise(cfg.kind, recs)))
    targets = [t for _, t, _, _ in per_n]
    means = [e.mean() for _, _, e, _ in per_n]
    slope = loglog_slope(targets, means)
    rng = np.random.default_rng(replication_seed(cfg.seed, 2**31))
    boots = []
    for _ in range(bootstrap):
        resampled = [rng.choice(e, size=e.size).mean() for _, _, e, _ in per_n]
        if min(resampled) > 0:
            boots.append(loglog_slope(targets, resampled))
    lo, hi = (np.percentile(boots, [2.5, 97.5]) if boots else (math.nan, math.nan))
    summary = {
        "n_grid": list(cfg.n_grid),
        "targets": targets,
        "mean_errors": means,
        "per_n": [s for *_, s in per_n],
        "slope": slope,
        "slope_ci": [float(lo), float(hi)],
        "runtime_s": time.perf_counter() - t0,
    }
    report = RunReport(cfg.kind, cfg.to_dict(), records, summary, __version__, override)
    return _finish(report, path)
