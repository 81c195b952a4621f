"""Synthetic coverage experiments: config, per-seed runs, aggregation."""

from __future__ import annotations

import json
import re
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .conformal import fixed_window_threshold, weighted_thresholds
from .drift_lab import (
    BaseSequenceParams,
    DriftScenario,
    RollingMean,
    RollingOLS,
    ScenarioKind,
    Stream,
    generate_stream,
    make_rng,
)
from .evaluation import (
    DEFAULT_BURN_IN,
    CoverageReport,
    _gaussian_mass,
    aggregate_runs,
    make_report,
    summary_document,
)
from .quantile_core import Grid, QuantileConfig, Variant, WindowedScores, select_window

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_method",
    "run_seed",
    "run_experiment",
    "DEFAULT_METHODS",
]

DEFAULT_METHODS = (
    "ARW",
    "W_0.99",
    "W_0.9",
    "W_0.5",
    "W_0.25",
    "V_1",
    "V_4",
    "V_16",
    "V_64",
    "V_256",
    "V_1024",
)
DEFAULT_TRAINING_WINDOWS = (1, 16, 256, 1024)

_METHOD_RE = re.compile(r"^(ARW|V_(\d+)|W_([0-9.eE+-]+))$")


class ConfigError(ValueError):
    """Malformed experiment configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def parse_method(name: str) -> tuple:
    """``"ARW"`` -> ``("ARW", None)``, ``"V_16"`` -> ``("V", 16)``, ``"W_0.9"`` -> ``("W", 0.9)``."""
    m = _METHOD_RE.match(name)
    if not m:
        raise ValueError(f"unknown method {name!r}; expected ARW, V_<k> or W_<rho>")
    if m.group(2):
        k = int(m.group(2))
        if k < 1:
            raise ValueError("fixed window must be at least 1")
        return "V", k
    if m.group(3):
        rho = float(m.group(3))
        if not 0 < rho <= 1:
            raise ValueError("decay rate must lie in (0, 1]")
        return "W", rho
    return "ARW", None


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: DriftScenario = field(default_factory=DriftScenario)
    seeds: tuple = tuple(range(10))
    methods: tuple = DEFAULT_METHODS
    training_windows: tuple = DEFAULT_TRAINING_WINDOWS
    alpha: float = 0.1
    delta_prime: float = 0.1
    variant: Variant = Variant.EXPERIMENT
    grid: Grid = Grid.DYADIC
    burn_in: int = DEFAULT_BURN_IN
    n_mc: int = 1000
    out: str | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "variant", Variant(self.variant))
            object.__setattr__(self, "grid", Grid(self.grid))
        except ValueError as exc:
            raise ConfigError("variant/grid", str(exc)) from None
        object.__setattr__(self, "seeds", tuple(self.seeds))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "training_windows", tuple(int(k) for k in self.training_windows))
        if not self.seeds:
            raise ConfigError("seeds", "need at least one seed")
        if not self.methods:
            raise ConfigError("methods", "need at least one method")
        if not self.training_windows:
            raise ConfigError("training_windows", "need at least one training window")
        for m in self.methods:
            try:
                parse_method(m)
            except ValueError as exc:
                raise ConfigError("methods", str(exc)) from None
        if any(int(k) < 1 for k in self.training_windows):
            raise ConfigError("training_windows", "windows must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha", "must lie in (0, 1)")
        if not 0 < self.delta_prime < 1:
            raise ConfigError("delta_prime", "must lie in (0, 1)")
        if self.burn_in < 0 or self.burn_in >= self.scenario.T:
            raise ConfigError("burn_in", f"must lie in [0, T) with T={self.scenario.T}")
        if self.n_mc < 1:
            raise ConfigError("n_mc", "must be positive")

    @property
    def quantile_config(self) -> QuantileConfig:
        return QuantileConfig(self.alpha, self.delta_prime, self.variant, self.grid)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        known = {
            "scenario", "seeds", "methods", "training_windows", "alpha", "delta_prime",
            "variant", "grid", "burn_in", "n_mc", "out",
        }
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown field")
        kwargs = {}
        if "scenario" in data:
            kwargs["scenario"] = _scenario_from_dict(data["scenario"])
        if "seeds" in data:
            kwargs["seeds"] = _parse_seeds(data["seeds"])
        for key in ("methods", "training_windows"):
            if key in data:
                if not isinstance(data[key], list):
                    raise ConfigError(key, "must be a list")
                kwargs[key] = tuple(data[key])
        if "training_windows" in kwargs and not all(
            isinstance(k, int) and not isinstance(k, bool) for k in kwargs["training_windows"]
        ):
            raise ConfigError("training_windows", "entries must be integers")
        for key, typ in (("alpha", float), ("delta_prime", float), ("burn_in", int), ("n_mc", int)):
            if key in data:
                kwargs[key] = _typed(key, data[key], typ)
        for key, enum in (("variant", Variant), ("grid", Grid)):
            if key in data:
                try:
                    kwargs[key] = enum(data[key])
                except ValueError:
                    raise ConfigError(key, f"expected one of {[e.value for e in enum]}") from None
        if "out" in data:
            kwargs["out"] = str(data["out"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}", exc.msg) from None
        return cls.from_dict(data)


def _typed(name, value, typ):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    if typ is int and int(value) != value:
        raise ConfigError(name, "expected an integer")
    return typ(value)


def _parse_seeds(value) -> tuple:
    if isinstance(value, int) and not isinstance(value, bool):
        if value < 1:
            raise ConfigError("seeds", "seed count must be positive")
        return tuple(range(value))
    if isinstance(value, list) and all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in value):
        return tuple(value)
    raise ConfigError("seeds", "expected a seed count or a list of nonnegative integers")


def _scenario_from_dict(data) -> DriftScenario:
    if not isinstance(data, dict):
        raise ConfigError("scenario", "must be an object")
    allowed = {"kind", "stationary", "T", "max_batch", "stationary_level", "base", "base_seed", "noise_sd"}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"scenario.{key}", "unknown field")
    kwargs = dict(data)
    if "kind" in kwargs:
        try:
            kwargs["kind"] = ScenarioKind(kwargs["kind"])
        except ValueError:
            raise ConfigError("scenario.kind", f"expected one of {[e.value for e in ScenarioKind]}") from None
    if "base" in kwargs:
        base = kwargs["base"]
        if not isinstance(base, dict):
            raise ConfigError("scenario.base", "must be an object")
        if "boundaries" in base and base["boundaries"] is not None:
            base = {**base, "boundaries": tuple(base["boundaries"])}
        try:
            kwargs["base"] = BaseSequenceParams(**base)
        except TypeError as exc:
            raise ConfigError("scenario.base", str(exc)) from None
    try:
        scenario = DriftScenario(**kwargs)
        if not scenario.stationary:
            scenario.base.resolved_boundaries()
    except (TypeError, ValueError) as exc:
        raise ConfigError("scenario", str(exc)) from None
    return scenario


def _thresholds(scores: WindowedScores, parsed: Sequence[tuple], qconfig: QuantileConfig, alpha: float):
    out = np.empty(len(parsed))
    rhos = [p for kind, p in parsed if kind == "W"]
    w_vals = iter(weighted_thresholds(scores, rhos, alpha) if rhos else ())
    for i, (kind, param) in enumerate(parsed):
        if kind == "ARW":
            out[i] = select_window(scores, qconfig).chosen_q
        elif kind == "V":
            out[i] = fixed_window_threshold(scores, param, alpha)
        else:
            out[i] = next(w_vals)
    return out


def run_seed(config: ExperimentConfig, seed: int, stream: Stream | None = None):
    """Run every method and training window on one stream.

    Returns ``{(method, training_window): CoverageReport}``.
    """
    stream = generate_stream(config.scenario, seed) if stream is None else stream
    regression = config.scenario.kind is ScenarioKind.LINEAR_REGRESSION
    parsed = [parse_method(m) for m in config.methods]
    qconfig = config.quantile_config
    T = stream.T
    cal_prefix = stream.cal_prefix
    reports = {}
    for tw in config.training_windows:
        predictor = RollingOLS(tw) if regression else RollingMean(tw)
        mc_rng = make_rng(seed, 2, tw)
        coverage = np.empty((T, len(parsed)))
        thresholds = np.empty((T, len(parsed)))
        for t in range(1, T + 1):
            state = predictor.fit(stream, t)
            n = int(cal_prefix[t])
            if regression:
                resid = stream.cal_y[:n] - stream.cal_x[:n] @ state
            else:
                resid = stream.cal_y[:n] - state
            scores = WindowedScores(np.abs(resid), cal_prefix[: t + 1])
            q = _thresholds(scores, parsed, qconfig, config.alpha)
            thresholds[t - 1] = q
            if regression:
                x, y = stream.sample_test(t, config.n_mc, mc_rng)
                test_resid = np.sort(np.abs(y - x @ state))
                coverage[t - 1] = np.searchsorted(test_resid, q, side="right") / config.n_mc
            else:
                coverage[t - 1] = _gaussian_mass(state, q, stream.true_mean(t), config.scenario.noise_sd)
        for i, name in enumerate(config.methods):
            reports[(name, tw)] = make_report(
                name, tw, coverage[:, i], 2.0 * thresholds[:, i], config.alpha, config.burn_in, seed
            )
    return reports


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    per_seed: dict
    aggregates: list

    def summary(self) -> dict:
        doc = summary_document(self.aggregates, self.config.methods, self.config.training_windows)
        doc["seeds"] = list(self.config.seeds)
        doc["scenario"] = {
            "kind": self.config.scenario.kind.value,
            "stationary": self.config.scenario.stationary,
            "T": self.config.scenario.T,
        }
        doc["variant"] = self.config.variant.value
        doc["grid"] = self.config.grid.value
        doc["delta_prime"] = self.config.delta_prime
        return doc

    def per_period_rows(self) -> Iterable[tuple]:
        for seed in self.config.seeds:
            for (method, tw), report in self.per_seed[seed].items():
                for t, c, w in report.per_period_rows():
                    yield seed, tw, t, method, c, w

    def mae(self, method: str, training_window: int) -> float:
        return next(r.mae for r in self.aggregates if r.key == (method, training_window))


def run_experiment(config: ExperimentConfig, progress=None, workers: int = 1) -> ExperimentResult:
    """Run all seeds and aggregate per (method, training window) cell.

    Seeds are independent; with ``workers > 1`` they run in a process pool.
    Results are collected in seed order either way, so output does not
    depend on scheduling.
    """
    per_seed = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, reports in zip(config.seeds, pool.map(partial(run_seed, config), config.seeds)):
                per_seed[seed] = reports
                if progress is not None:
                    progress(seed)
    else:
        for seed in config.seeds:
            per_seed[seed] = run_seed(config, seed)
            if progress is not None:
                progress(seed)
    aggregates = []
    for tw in config.training_windows:
        for m in config.methods:
            aggregates.append(aggregate_runs([per_seed[s][(m, tw)] for s in config.seeds]))
    return ExperimentResult(config, per_seed, aggregates)
