"""Experiment configuration: parsing, validation and object construction.

A config is one YAML (or JSON) mapping with the sections ``market``,
``grid``, ``noise``, ``task``, ``claim`` and ``tolerances``.  Key names are
documented in the README; unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import expr, presets
from .errors import ValidationError
from .europricer import ClaimSpec
from .market import MarketSpec
from .noise import TimeGrid

TASKS = ("simulate", "check-market", "price-eu", "hedge-eu", "price-am", "consistency", "cocycle", "condition1")

_SECTIONS = {"market", "grid", "noise", "task", "claim", "tolerances"}
_MARKET_KEYS = {"preset", "params", "n", "d", "b", "sigma", "delta", "r", "p0", "T", "autonomous", "name"}
_GRID_KEYS = {"steps", "exercise_dates"}
_NOISE_KEYS = {"seed", "paths"}
_TASK_KEYS = {
    "name", "degree", "s", "s_mid", "t", "factors", "witness_indices", "dominating",
    "gamma", "perturbations", "base_t", "x", "box_rel", "samples", "test_paths",
}
_CLAIM_KEYS = {"preset", "strike", "asset", "barrier", "driving", "uses_noise"}
_TOL_KEYS = {"kappa", "hedge", "arbitrage", "rank", "dominating_rel"}

DEFAULT_TOLERANCES = {"kappa": 1e-10, "hedge": 1e-8, "arbitrage": 1e-10, "rank": 1e-10, "dominating_rel": 0.05}


def _need_mapping(value, name):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ValidationError(f"section {name!r} must be a mapping")
    return value


def _check_keys(section, allowed, name):
    extra = set(section) - allowed
    if extra:
        raise ValidationError(f"unknown key(s) in {name}: {', '.join(sorted(extra))}")


def _positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}")
    return value


def _number(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise ValidationError(f"{name} must be a finite number")
    return float(value)


@dataclass
class ExperimentConfig:
    market: dict
    grid: dict
    noise: dict
    task: dict
    claim: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    @property
    def task_name(self) -> str:
        return self.task["name"]

    @property
    def seed(self) -> int:
        return self.noise["seed"]

    @property
    def paths(self) -> int:
        return self.noise["paths"]

    def tol(self, key: str) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))

    def as_dict(self) -> dict:
        return {
            "market": self.market,
            "grid": self.grid,
            "noise": self.noise,
            "task": self.task,
            "claim": self.claim,
            "tolerances": self.tolerances,
        }

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the validated inputs."""
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, seed=None, paths=None) -> "ExperimentConfig":
        cfg = copy.deepcopy(self)
        if seed is not None:
            cfg.noise["seed"] = _positive_int(seed, "--seed", 0)
        if paths is not None:
            cfg.noise["paths"] = _positive_int(paths, "--paths", 2)
        return cfg

    def build_market(self) -> MarketSpec:
        return build_market(self.market)

    def build_claim(self, m: MarketSpec) -> ClaimSpec:
        return build_claim(self.claim, m)

    def build_grid(self, m: MarketSpec) -> TimeGrid:
        return TimeGrid.uniform(m.T, self.grid["steps"])


def load(path) -> ExperimentConfig:
    """Read and validate a YAML/JSON config file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"config is not valid YAML/JSON: {exc}") from None
    return validate(raw)


def validate(raw) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ValidationError("config must be a mapping of sections")
    _check_keys(raw, _SECTIONS, "config")
    market = dict(_need_mapping(raw.get("market"), "market"))
    grid = dict(_need_mapping(raw.get("grid"), "grid"))
    noise = dict(_need_mapping(raw.get("noise"), "noise"))
    task = dict(_need_mapping(raw.get("task"), "task"))
    claim = dict(_need_mapping(raw.get("claim"), "claim"))
    tols = dict(_need_mapping(raw.get("tolerances"), "tolerances"))
    for sec, keys, name in (
        (market, _MARKET_KEYS, "market"), (grid, _GRID_KEYS, "grid"), (noise, _NOISE_KEYS, "noise"),
        (task, _TASK_KEYS, "task"), (claim, _CLAIM_KEYS, "claim"), (tols, _TOL_KEYS, "tolerances"),
    ):
        _check_keys(sec, keys, name)

    if task.get("name") not in TASKS:
        raise ValidationError(f"task.name must be one of {', '.join(TASKS)}")
    grid["steps"] = _positive_int(grid.get("steps", 100), "grid.steps")
    if "exercise_dates" in grid:
        dates = _positive_int(grid["exercise_dates"], "grid.exercise_dates")
        if grid["steps"] % dates:
            raise ValidationError("grid.exercise_dates must divide grid.steps")
    noise["seed"] = _positive_int(noise.get("seed", 0), "noise.seed", 0)
    noise["paths"] = _positive_int(noise.get("paths", 10000), "noise.paths", 2)
    for key, value in tols.items():
        if _number(value, f"tolerances.{key}") <= 0:
            raise ValidationError(f"tolerances.{key} must be positive")

    cfg = ExperimentConfig(market, grid, noise, task, claim, tols)
    m = cfg.build_market()
    if task["name"] in ("price-eu", "hedge-eu", "price-am") or claim:
        cfg.build_claim(m)
    _check_task(cfg, m)
    return cfg


def _check_task(cfg: ExperimentConfig, m: MarketSpec):
    task, steps = cfg.task, cfg.grid["steps"]
    grid_times = TimeGrid.uniform(m.T, steps)
    for key in ("s", "s_mid", "t", "base_t"):
        if key in task:
            value = _number(task[key], f"task.{key}")
            if not 0 <= value <= m.T:
                raise ValidationError(f"task.{key} must lie in [0, T]")
            try:
                grid_times.index(value)
            except Exception:
                raise ValidationError(f"task.{key}={value} is not a grid point") from None
    if "degree" in task:
        _positive_int(task["degree"], "task.degree")
    if "factors" in task:
        factors = task["factors"]
        if not isinstance(factors, list) or not factors:
            raise ValidationError("task.factors must be a non-empty list")
        for f in factors:
            _positive_int(f, "task.factors entry")
    if "witness_indices" in task:
        idx = task["witness_indices"]
        if not isinstance(idx, list) or not idx or any(
            isinstance(i, bool) or not isinstance(i, int) or not 0 <= i < m.d for i in idx
        ):
            raise ValidationError(f"task.witness_indices must list noise components in 0..{m.d - 1}")
    if "perturbations" in task:
        pert = task["perturbations"]
        if not isinstance(pert, dict) or not pert:
            raise ValidationError("task.perturbations must map arguments to step lists")
        for name, sizes in pert.items():
            if name not in ("x", "s", "t") and not (name.startswith("p") and name[1:].isdigit() and int(name[1:]) <= m.n):
                raise ValidationError(f"unknown perturbation argument {name!r}")
            if not isinstance(sizes, list) or len(sizes) < 2:
                raise ValidationError(f"perturbation {name!r} needs at least two sizes")
            for h in sizes:
                if _number(h, f"perturbation {name}") <= 0:
                    raise ValidationError("perturbation sizes must be positive")
    if task["name"] == "cocycle" and not m.autonomous:
        raise ValidationError("cocycle needs an autonomous market (market.autonomous: true)")
    if task["name"] == "price-am" and "exercise_dates" not in cfg.grid:
        raise ValidationError("price-am needs grid.exercise_dates")


def build_market(section: dict) -> MarketSpec:
    if "preset" in section:
        name = section["preset"]
        if name not in presets.MARKETS:
            raise ValidationError(f"unknown market preset {name!r}; known: {', '.join(presets.MARKETS)}")
        explicit = _MARKET_KEYS - {"preset", "params"}
        if explicit & set(section):
            raise ValidationError("a market preset takes overrides via market.params only")
        params = _need_mapping(section.get("params"), "market.params")
        for key, value in params.items():
            _number(value, f"market.params.{key}")
        try:
            return presets.MARKETS[name](**params)
        except TypeError as exc:
            raise ValidationError(f"bad parameters for preset {name!r}: {exc}") from None
    missing = {"n", "d", "b", "sigma", "r", "p0", "T"} - set(section)
    if missing:
        raise ValidationError(f"market needs a preset or the keys {', '.join(sorted(missing))}")
    n = _positive_int(section["n"], "market.n")
    d = _positive_int(section["d"], "market.d")
    p0 = section["p0"]
    if not isinstance(p0, list) or len(p0) != n + 1:
        raise ValidationError(f"market.p0 must list {n + 1} prices (shadow stock first)")
    p0 = [_number(v, "market.p0") for v in p0]
    if min(p0) <= 0:
        raise ValidationError("market.p0 entries must be positive")
    T = _number(section["T"], "market.T")
    if T <= 0:
        raise ValidationError("market.T must be positive")
    try:
        return MarketSpec(
            n=n,
            d=d,
            b=expr.vector(section["b"], n, n),
            sigma=expr.matrix(section["sigma"], n, n, d),
            delta=expr.vector(section.get("delta", [0] * n), n, n),
            r=expr.scalar(section["r"], n),
            p0=p0,
            T=T,
            autonomous=bool(section.get("autonomous", False)),
            name=str(section.get("name", "custom")),
        )
    except ValidationError:
        raise
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def build_claim(section: dict, m: MarketSpec) -> ClaimSpec:
    name = section.get("preset")
    if name not in presets.CLAIMS:
        raise ValidationError(f"claim.preset must be one of {', '.join(presets.CLAIMS)}")
    asset = _positive_int(section.get("asset", 1), "claim.asset")
    if asset > m.n:
        raise ValidationError(f"claim.asset must be in 1..{m.n}")
    strike = _number(section.get("strike", 100.0), "claim.strike")
    kwargs = {"strike": strike, "asset": asset}
    barrier = section.get("barrier")
    if name == "barrier-capped":
        kwargs["barrier"] = _number(barrier if barrier is not None else 130.0, "claim.barrier")
        if kwargs["barrier"] <= m.p0[asset]:
            raise ValidationError("claim.barrier must lie above the initial price")
    elif barrier is not None:
        raise ValidationError("claim.barrier only applies to the barrier-capped preset")
    claim = presets.CLAIMS[name](**kwargs)
    driving = section.get("driving")
    if driving is not None:
        if not isinstance(driving, list) or not driving or any(
            isinstance(i, bool) or not isinstance(i, int) or not 0 <= i < m.d for i in driving
        ):
            raise ValidationError(f"claim.driving must list noise components in 0..{m.d - 1}")
        claim = ClaimSpec(claim.payoff, claim.name, claim.barrier, claim.b_gamma, claim.sigma_gamma,
                          tuple(sorted(driving)), bool(section.get("uses_noise", False)))
    elif section.get("uses_noise"):
        claim = ClaimSpec(claim.payoff, claim.name, claim.barrier, claim.b_gamma, claim.sigma_gamma, None, True)
    return claim
