"""Experiment configuration: validation, defaults and YAML round-trip."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import yaml

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "KINDS",
    "dump_config",
    "load_config",
    "parse_config",
    "replication_seed",
]

KINDS = ("logistic", "matcomp", "regression", "mixture", "divergence-check")

# None means "derive from the other parameters at run time".
_DEFAULTS: dict[str, dict[str, Any]] = {
    "logistic": {
        "d": 2,
        "n": 500,
        "prior_variance": 1.0,
        "T": None,
        "B": None,
        "psd_floor": None,
        "theta0_norm": 0.0,
        "design": "unit_sphere",
        "family": "full",
        "mc_samples": 400,
        "z_ref": 4000,
    },
    "matcomp": {
        "m": 30,
        "p": 30,
        "K": 2,
        "r": 1,
        "n": 500,
        "a": 1.0,
        "b": None,
        "B": 1.0,
        "sigma2": 0.01,
        "sweeps": 100,
        "scaling": "likelihood",
        "mc_samples": 200,
        "clip": 1.0,
    },
    "regression": {
        "r": 2.0,
        "C2": 10.0,
        "n": 512,
        "K_max": None,
        "mc_samples": 200,
    },
    "mixture": {
        "n": 2000,
        "m0": 1.0,
        "sigma0_sq": 0.25,
        "probe": [1e-2, 1e-4, 1e-6],
        "mc_samples": 10_000,
        "quad_order": 8,
        "starts": 3,
    },
    "divergence-check": {
        "mu_gaps": [0.0, 0.25, 0.5, 1.0, 2.0],
        "sigma2s": [0.1, 0.5, 1.0, 2.0, 5.0],
        "alphas": [0.1, 0.3, 0.5, 0.7, 0.9],
        "discrete_pairs": 1000,
        "support": 5,
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    kind: str
    alpha: float = 0.5
    seed: int = 0
    reps: int = 1
    output: Optional[str] = None
    n_grid: Optional[list[int]] = None
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError("kind", f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not isinstance(self.alpha, (int, float)) or not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha", f"must lie in (0, 1), got {self.alpha!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {self.seed!r}")
        if not isinstance(self.reps, int) or self.reps < 1:
            raise ConfigError("reps", f"must be a positive integer, got {self.reps!r}")
        if self.n_grid is not None:
            grid = list(self.n_grid)
            if self.kind not in ("logistic", "matcomp", "regression"):
                raise ConfigError("n_grid", f"rate sweeps are not defined for kind {self.kind!r}")
            if len(grid) < 3 or any(not isinstance(v, int) or v < 3 for v in grid):
                raise ConfigError("n_grid", "needs at least 3 integer sample sizes >= 3")
            if max(grid) < 10 * min(grid):
                raise ConfigError("n_grid", "must span at least one decade")
            self.n_grid = sorted(grid)
        self.params = _merge_params(self.kind, self.params)

    def resolved(self, **overrides) -> "ExperimentConfig":
        """Copy with top-level fields replaced and parameter overrides applied."""
        top = {k: overrides.pop(k) for k in ("alpha", "seed", "reps", "output", "n_grid") if k in overrides}
        params = {**self.params, **overrides}
        base = self.to_dict()
        base.update(top)
        base["params"] = params
        return ExperimentConfig.from_dict(base)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "alpha": self.alpha,
            "seed": self.seed,
            "reps": self.reps,
            "output": self.output,
            "n_grid": None if self.n_grid is None else list(self.n_grid),
            "params": copy.deepcopy(self.params),
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "configuration must be a mapping")
        if "kind" not in raw:
            raise ConfigError("kind", "missing")
        unknown = set(raw) - {"kind", "alpha", "seed", "reps", "output", "n_grid", "params"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown top-level field")
        params = raw.get("params") or {}
        if not isinstance(params, dict):
            raise ConfigError("params", "must be a mapping")
        kw = {k: raw[k] for k in ("alpha", "seed", "reps", "output", "n_grid") if k in raw}
        return cls(kind=raw["kind"], params=dict(params), **kw)


def _merge_params(kind: str, given: dict[str, Any]) -> dict[str, Any]:
    defaults = _DEFAULTS[kind]
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"params.{sorted(unknown)[0]}", f"not a parameter of kind {kind!r}")
    merged = copy.deepcopy(defaults)
    merged.update(copy.deepcopy(given))
    _validate_params(kind, merged)
    return merged


def _positive(params, name, integer=False, allow_none=False):
    v = params[name]
    if v is None and allow_none:
        return
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok or not (v > 0 and math.isfinite(v)):
        kind = "positive integer" if integer else "positive number"
        raise ConfigError(f"params.{name}", f"must be a {kind}, got {v!r}")


def _validate_params(kind: str, p: dict[str, Any]) -> None:
    if kind == "logistic":
        for k in ("d", "n", "mc_samples", "z_ref"):
            _positive(p, k, integer=True)
        _positive(p, "T", integer=True, allow_none=True)
        _positive(p, "prior_variance")
        _positive(p, "B", allow_none=True)
        if p["psd_floor"] is not None and not (isinstance(p["psd_floor"], (int, float)) and p["psd_floor"] >= 0):
            raise ConfigError("params.psd_floor", "must be nonnegative")
        if not isinstance(p["theta0_norm"], (int, float)) or p["theta0_norm"] < 0:
            raise ConfigError("params.theta0_norm", "must be nonnegative")
        if p["design"] not in ("unit_sphere", "gaussian"):
            raise ConfigError("params.design", f"unknown design {p['design']!r}")
        if p["family"] not in ("full", "diag", "iso"):
            raise ConfigError("params.family", f"unknown family {p['family']!r}")
        if p["mc_samples"] < 100:
            raise ConfigError("params.mc_samples", "needs at least 100 samples")
    elif kind == "matcomp":
        for k in ("m", "p", "K", "r", "n", "sweeps", "mc_samples"):
            _positive(p, k, integer=True)
        for k in ("a", "B", "sigma2", "clip"):
            _positive(p, k)
        _positive(p, "b", allow_none=True)
        if p["r"] > min(p["m"], p["p"]):
            raise ConfigError("params.r", "must not exceed min(m, p)")
        if p["scaling"] not in ("likelihood", "averaged"):
            raise ConfigError("params.scaling", f"unknown scaling {p['scaling']!r}")
    elif kind == "regression":
        _positive(p, "n", integer=True)
        _positive(p, "mc_samples", integer=True)
        _positive(p, "K_max", integer=True, allow_none=True)
        _positive(p, "C2")
        if not isinstance(p["r"], (int, float)) or p["r"] < 2:
            raise ConfigError("params.r", "smoothness must be at least 2")
        if p["n"] < 3:
            raise ConfigError("params.n", "must be at least 3")
    elif kind == "mixture":
        for k in ("n", "mc_samples", "quad_order", "starts"):
            _positive(p, k, integer=True)
        _positive(p, "sigma0_sq")
        if not 0 < p["sigma0_sq"] <= 1:
            raise ConfigError("params.sigma0_sq", "must lie in (0, 1] under the uniform prior")
        probe = p["probe"]
        if not probe or any(not isinstance(v, (int, float)) or v <= 0 for v in probe):
            raise ConfigError("params.probe", "must be a nonempty list of positive variances")
        if any(b >= a for a, b in zip(probe, probe[1:])):
            raise ConfigError("params.probe", "variances must be strictly decreasing")
    else:
        for k in ("mu_gaps", "sigma2s", "alphas"):
            if not p[k]:
                raise ConfigError(f"params.{k}", "must be a nonempty list")
        if any(not 0 < a < 1 for a in p["alphas"]):
            raise ConfigError("params.alphas", "orders must lie in (0, 1)")
        if any(s <= 0 for s in p["sigma2s"]):
            raise ConfigError("params.sigma2s", "variances must be positive")
        _positive(p, "discrete_pairs", integer=True)
        _positive(p, "support", integer=True)
        if p["support"] < 2:
            raise ConfigError("params.support", "must be at least 2")


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<document>", f"not valid YAML: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def replication_seed(seed: int, rep: int, *stream: int) -> int:
    """Counter-based substream: the seed of replication ``rep`` (and optional sub-stream)."""
    ss = np.random.SeedSequence(seed, spawn_key=(rep, *stream))
    return int(ss.generate_state(1, np.uint64)[0])
