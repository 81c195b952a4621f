"""Conformity scores and prediction intervals.

Three threshold rules share the same interval construction: the adaptive
rolling window (ARW), a fixed look-back window, and exponentially weighted
nonexchangeable split conformal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .quantile_core import (
    QuantileConfig,
    SelectionTrace,
    WindowedScores,
    select_window,
    window_quantile,
)

__all__ = [
    "ScoreKind",
    "ConformityScore",
    "PredictionInterval",
    "WeightedBaselineConfig",
    "score_batch",
    "weighted_quantile",
    "weighted_threshold",
    "weighted_thresholds",
    "fixed_window_threshold",
    "arw_prediction_interval",
    "fixed_window_interval",
    "weighted_interval",
]


class ScoreKind(str, Enum):
    ABSOLUTE_RESIDUAL = "absolute_residual"
    STUDENTIZED = "studentized"


@dataclass(frozen=True)
class ConformityScore:
    """Score ``|y - mu(x)|``, optionally divided by ``sigma(x)``."""

    predictor: Callable
    scale: Optional[Callable] = None
    kind: ScoreKind = ScoreKind.ABSOLUTE_RESIDUAL

    def __post_init__(self):
        kind = ScoreKind(self.kind)
        if kind is ScoreKind.STUDENTIZED and self.scale is None:
            raise ValueError("studentized scores need a scale function")
        object.__setattr__(self, "kind", kind)

    @classmethod
    def absolute(cls, predictor: Callable) -> "ConformityScore":
        return cls(predictor)

    @classmethod
    def studentized(cls, predictor: Callable, scale: Callable) -> "ConformityScore":
        return cls(predictor, scale, ScoreKind.STUDENTIZED)

    def center(self, x) -> np.ndarray:
        return np.asarray(self.predictor(x), dtype=float)

    def spread(self, x) -> np.ndarray:
        if self.kind is ScoreKind.ABSOLUTE_RESIDUAL:
            return np.ones_like(self.center(x))
        sigma = np.asarray(self.scale(x), dtype=float)
        if np.any(~(sigma > 0)):
            raise ValueError("scale function must be strictly positive")
        return sigma

    def __call__(self, x, y) -> np.ndarray:
        resid = np.abs(np.asarray(y, dtype=float) - self.center(x))
        if self.kind is ScoreKind.STUDENTIZED:
            resid = resid / self.spread(x)
        return resid


def score_batch(score: ConformityScore, x, y) -> np.ndarray:
    """Scores of a batch of ``(x, y)`` pairs; ``x`` rows align with ``y``."""
    return np.atleast_1d(score(x, y)).astype(float)


@dataclass(frozen=True)
class PredictionInterval:
    """Interval ``[center - radius, center + radius]`` with its threshold.

    ``threshold`` may be ``inf`` (weighted baseline on small samples); then
    the interval is the whole real line and ``capped`` is true.
    """

    center: float
    radius: float
    threshold: float
    method: str
    chosen_k: Optional[int] = None

    @property
    def lower(self) -> float:
        return self.center - self.radius

    @property
    def upper(self) -> float:
        return self.center + self.radius

    @property
    def width(self) -> float:
        return 2.0 * self.radius

    @property
    def capped(self) -> bool:
        return math.isinf(self.threshold)

    def __contains__(self, y) -> bool:
        return self.lower <= y <= self.upper


@dataclass(frozen=True)
class WeightedBaselineConfig:
    rho: float
    alpha: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def tag(self) -> str:
        return f"W_{self.rho:g}"


def weighted_quantile(values, weights, gamma: float, inf_weight: float = 1.0) -> float:
    """Left ``gamma``-quantile of a weighted empirical distribution.

    An extra atom at ``+inf`` carries ``inf_weight``. The result is the
    smallest value whose cumulative weight reaches ``gamma`` times the total
    weight, or ``inf`` if only the extra atom gets there.
    """
    values = np.asarray(values, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if values.shape != weights.shape:
        raise ValueError("values and weights must have the same length")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    total = (cum[-1] if cum.size else 0.0) + inf_weight
    if total <= 0:
        raise ValueError("total weight must be positive")
    idx = int(np.searchsorted(cum, gamma * total, side="left"))
    if idx >= values.size:
        return math.inf
    return float(values[order[idx]])


def _period_weights(scores: WindowedScores, t: int, rho: float) -> np.ndarray:
    sizes = scores.batch_sizes()[:t]
    ages = np.arange(t - 1, -1, -1, dtype=float)
    # 0.0 ** 0 == 1 keeps the latest period when rho underflows
    return np.repeat(rho**ages, sizes)


def weighted_threshold(
    scores: WindowedScores, config: WeightedBaselineConfig, t: int | None = None
) -> float:
    """Nonexchangeable split-conformal threshold with weights ``rho**(t - j)``.

    Every score of period ``j`` gets the same weight; the test point is a
    unit-weight atom at ``+inf``.
    """
    t = scores.n_periods if t is None else t
    scores._check_window(t, 1)
    return weighted_quantile(
        scores.window(t, t), _period_weights(scores, t, config.rho), 1.0 - config.alpha
    )


def weighted_thresholds(
    scores: WindowedScores, rhos: Sequence[float], alpha: float, t: int | None = None
) -> np.ndarray:
    """Same as :func:`weighted_threshold` for several decay rates, sorting once."""
    t = scores.n_periods if t is None else t
    scores._check_window(t, 1)
    values = scores.window(t, t)
    order = np.argsort(values, kind="stable")
    ordered = values[order]
    sizes = scores.batch_sizes()[:t]
    period = np.repeat(np.arange(t), sizes)[order]
    gamma = 1.0 - alpha
    out = np.empty(len(rhos))
    for i, rho in enumerate(rhos):
        WeightedBaselineConfig(rho, alpha)
        w = rho ** (t - 1 - period).astype(float)
        cum = np.cumsum(w)
        idx = int(np.searchsorted(cum, gamma * (cum[-1] + 1.0), side="left"))
        out[i] = math.inf if idx >= ordered.size else ordered[idx]
    return out


def fixed_window_threshold(scores: WindowedScores, k: int, alpha: float, t: int | None = None) -> float:
    if k < 1:
        raise ValueError("window length must be at least 1")
    t = scores.n_periods if t is None else t
    return window_quantile(scores, t, min(k, t), alpha)


def _interval(score: ConformityScore, x_t, threshold: float, method: str, chosen_k=None):
    center = float(np.ravel(score.center(x_t))[0])
    spread = float(np.ravel(score.spread(x_t))[0])
    radius = math.inf if math.isinf(threshold) else threshold * spread
    return PredictionInterval(center, radius, threshold, method, chosen_k)


def arw_prediction_interval(
    calibration: WindowedScores,
    config: QuantileConfig,
    score: ConformityScore,
    x_t,
    return_trace: bool = False,
):
    """Prediction interval from the adaptively chosen rolling window.

    Returns the interval, or ``(interval, trace)`` with ``return_trace``.
    """
    trace: SelectionTrace = select_window(calibration, config)
    interval = _interval(score, x_t, trace.chosen_q, "ARW", trace.chosen_k)
    return (interval, trace) if return_trace else interval


def fixed_window_interval(
    calibration: WindowedScores, k: int, alpha: float, score: ConformityScore, x_t
) -> PredictionInterval:
    """Interval from the last ``min(k, t)`` periods."""
    t = calibration.n_periods
    threshold = fixed_window_threshold(calibration, k, alpha)
    return _interval(score, x_t, threshold, f"V_{k}", min(k, t))


def weighted_interval(
    calibration: WindowedScores,
    config: WeightedBaselineConfig,
    score: ConformityScore,
    x_t,
) -> PredictionInterval:
    threshold = weighted_threshold(calibration, config)
    return _interval(score, x_t, threshold, config.tag)
