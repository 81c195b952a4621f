"""Rolling-window empirical quantiles and adaptive window selection.

Scores arrive in batches, one batch per period. For a window of the last
``k`` periods the pooled scores define an empirical CDF and a left
``(1 - alpha)``-quantile. The adaptive selector trades an estimated drift
bias against a Bernstein-type stochastic error bound and picks the window
minimizing their sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Variant",
    "Grid",
    "WindowedScores",
    "QuantileConfig",
    "SelectionTrace",
    "empirical_cdf",
    "left_quantile",
    "right_quantile",
    "window_quantile",
    "window_grid",
    "psi",
    "bias_proxy",
    "select_window",
]


class Variant(str, Enum):
    """Constants used in the error bound and the bias proxy."""

    THEORY = "theory"
    EXPERIMENT = "experiment"


class Grid(str, Enum):
    """Candidate window lengths: every ``k`` in ``1..t`` or powers of two."""

    FULL = "full"
    DYADIC = "dyadic"


@dataclass(frozen=True)
class WindowedScores:
    """Append-only log of score batches.

    Scores of all periods are stored in one flat array; ``prefix[j]`` is the
    number of scores in periods ``1..j`` so ``prefix[0] == 0``.
    """

    values: np.ndarray
    prefix: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        prefix = np.asarray(self.prefix, dtype=np.int64)
        if values.ndim != 1 or prefix.ndim != 1:
            raise ValueError("values and prefix must be one-dimensional")
        if prefix.size == 0 or prefix[0] != 0:
            raise ValueError("prefix must start at 0")
        if np.any(np.diff(prefix) < 1):
            raise ValueError("every batch must hold at least one score")
        if prefix[-1] != values.size:
            raise ValueError("prefix counts do not match the number of scores")
        values.setflags(write=False)
        prefix.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "prefix", prefix)

    @classmethod
    def from_batches(cls, batches: Iterable[Sequence[float]]) -> "WindowedScores":
        arrays = [np.asarray(b, dtype=float).ravel() for b in batches]
        sizes = [a.size for a in arrays]
        prefix = np.concatenate([[0], np.cumsum(sizes, dtype=np.int64)])
        values = np.concatenate(arrays) if arrays else np.empty(0)
        return cls(values, prefix)

    @classmethod
    def from_sizes(cls, values, sizes) -> "WindowedScores":
        """Build from flat scores and per-period batch sizes."""
        prefix = np.concatenate([[0], np.cumsum(sizes, dtype=np.int64)])
        return cls(values, prefix)

    def append(self, batch: Sequence[float]) -> "WindowedScores":
        """Return a new log with ``batch`` as the latest period."""
        batch = np.asarray(batch, dtype=float).ravel()
        if batch.size == 0:
            raise ValueError("every batch must hold at least one score")
        return WindowedScores(
            np.concatenate([self.values, batch]),
            np.append(self.prefix, self.prefix[-1] + batch.size),
        )

    @property
    def n_periods(self) -> int:
        return self.prefix.size - 1

    def batch(self, j: int) -> np.ndarray:
        """Scores of period ``j`` (1-based)."""
        self._check_window(j, 1)
        return self.values[self.prefix[j - 1] : self.prefix[j]]

    def batch_sizes(self) -> np.ndarray:
        return np.diff(self.prefix)

    def window_size(self, t: int, k: int) -> int:
        """Number of scores in periods ``t-k+1..t``."""
        self._check_window(t, k)
        return int(self.prefix[t] - self.prefix[t - k])

    def window(self, t: int, k: int) -> np.ndarray:
        """Pooled scores of periods ``t-k+1..t`` as a read-only view."""
        self._check_window(t, k)
        return self.values[self.prefix[t - k] : self.prefix[t]]

    def _check_window(self, t: int, k: int) -> None:
        if not 1 <= t <= self.n_periods:
            raise IndexError(f"period {t} outside 1..{self.n_periods}")
        if not 1 <= k <= t:
            raise IndexError(f"window length {k} outside 1..{t}")

    def __len__(self) -> int:
        return self.n_periods


@dataclass(frozen=True)
class QuantileConfig:
    alpha: float = 0.1
    delta_prime: float = 0.1
    variant: Variant = Variant.EXPERIMENT
    grid: Grid | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.delta_prime < 1.0:
            raise ValueError(f"delta_prime must lie in (0, 1), got {self.delta_prime}")
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.grid is None:
            grid = Grid.DYADIC if self.variant is Variant.EXPERIMENT else Grid.FULL
        else:
            grid = Grid(self.grid)
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class SelectionTrace:
    """Per-window diagnostics from :func:`select_window`.

    All arrays are aligned with ``windows``.
    """

    t: int
    windows: np.ndarray
    sizes: np.ndarray
    q_hat: np.ndarray
    psi: np.ndarray
    phi_hat: np.ndarray
    objective: np.ndarray
    chosen_index: int

    @property
    def chosen_k(self) -> int:
        return int(self.windows[self.chosen_index])

    @property
    def chosen_q(self) -> float:
        return float(self.q_hat[self.chosen_index])

    def rows(self):
        """Yield one dict per candidate window."""
        for i in range(self.windows.size):
            yield {
                "k": int(self.windows[i]),
                "n_scores": int(self.sizes[i]),
                "q_hat": float(self.q_hat[i]),
                "psi": float(self.psi[i]),
                "phi_hat": float(self.phi_hat[i]),
                "objective": float(self.objective[i]),
                "chosen": i == self.chosen_index,
            }


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {gamma}")


def _order_statistic(values: np.ndarray, rank: int) -> float:
    # rank is 1-based
    return float(np.partition(values, rank - 1)[rank - 1])


def _as_sample(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("cannot take a quantile of an empty sample")
    return arr


def left_rank(n: int, gamma: float) -> int:
    """1-based rank of the left ``gamma``-quantile among ``n`` scores.

    The smallest ``i`` with ``i >= gamma * n``, clipped to ``[1, n]``.
    """
    return min(max(math.ceil(gamma * n), 1), n)


def right_rank(n: int, gamma: float) -> int:
    """1-based rank of the right ``gamma``-quantile: smallest ``i > gamma * n``."""
    return min(math.floor(gamma * n) + 1, n)


def left_quantile(values, gamma: float) -> float:
    """Left ``gamma``-quantile ``inf{x : F(x) >= gamma}`` of an empirical CDF."""
    _check_gamma(gamma)
    arr = _as_sample(values)
    return _order_statistic(arr, left_rank(arr.size, gamma))


def right_quantile(values, gamma: float) -> float:
    """Right ``gamma``-quantile ``inf{x : F(x) > gamma}`` of an empirical CDF."""
    _check_gamma(gamma)
    arr = _as_sample(values)
    return _order_statistic(arr, right_rank(arr.size, gamma))


def empirical_cdf(scores: WindowedScores, t: int, k: int, x: float) -> float:
    window = scores.window(t, k)
    return np.count_nonzero(window <= x) / window.size


def window_quantile(scores: WindowedScores, t: int, k: int, alpha: float) -> float:
    """Left ``(1 - alpha)``-quantile of the scores pooled over the last ``k`` periods."""
    return left_quantile(scores.window(t, k), 1.0 - alpha)


def window_grid(t: int, grid: Grid | str = Grid.FULL) -> np.ndarray:
    """Candidate window lengths at period ``t``.

    The dyadic grid is ``1, 2, 4, ..., 2**(m-2), t`` with ``m = ceil(log2 t) + 1``.
    """
    if t < 1:
        raise ValueError("need at least one period of history")
    if Grid(grid) is Grid.FULL:
        return np.arange(1, t + 1, dtype=np.int64)
    m = (t - 1).bit_length() + 1
    return np.array([2**s for s in range(m - 1)] + [t], dtype=np.int64)


def _psi_from_size(n, alpha: float, delta: float, variant: Variant):
    n = np.asarray(n, dtype=float)
    if Variant(variant) is Variant.THEORY:
        log_term = math.log(2.0 / delta)
        return 1.25 * np.sqrt(2.0 * alpha * (1.0 - alpha) * log_term / n) + 4.0 * log_term / n
    log_term = math.log(1.0 / delta)
    return np.sqrt(alpha * (1.0 - alpha) * log_term / n) + 1.0 / n


def psi(
    scores: WindowedScores,
    t: int,
    k: int,
    alpha: float,
    delta: float,
    variant: Variant | str = Variant.THEORY,
) -> float:
    """High-probability bound on the stochastic error of the window-``k`` quantile.

    Depends on the data only through the window's sample count.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return float(_psi_from_size(scores.window_size(t, k), alpha, delta, variant))


def _suffix_counts(segment: np.ndarray, threshold: float, sizes: np.ndarray) -> np.ndarray:
    # counts of scores <= threshold among the last `sizes` entries of segment
    hits = (segment <= threshold)[::-1].cumsum()
    return hits[sizes - 1]


def _bias_terms(
    segment: np.ndarray,
    q: float,
    inner_sizes: np.ndarray,
    psi_outer: float,
    psi_inner: np.ndarray,
    alpha: float,
    variant: Variant,
) -> float:
    deviation = np.abs(_suffix_counts(segment, q, inner_sizes) / inner_sizes - (1.0 - alpha))
    if variant is Variant.THEORY:
        slack = 1.2 * psi_outer + 0.8 * psi_inner
    else:
        slack = psi_outer + psi_inner
    return 5.0 / 12.0 * max(float(np.max(deviation - slack)), 0.0)


def bias_proxy(
    scores: WindowedScores,
    t: int,
    k: int,
    alpha: float,
    delta: float,
    variant: Variant | str = Variant.THEORY,
    grid: Grid | str = Grid.FULL,
) -> float:
    """Data-driven lower estimate of the drift bias within the last ``k`` periods.

    Compares the window-``k`` quantile against the empirical CDFs of every
    shorter candidate window and keeps the largest excess deviation beyond
    the stochastic error allowance. The theory variant evaluates the error
    bounds at ``delta / 2``; the experiment variant at ``delta``.
    """
    variant = Variant(variant)
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    scores._check_window(t, k)
    inner = window_grid(t, grid)
    inner = inner[inner <= k]
    if inner[-1] != k:
        raise ValueError(f"window {k} is not on the {Grid(grid).value} grid at t={t}")
    level = delta / 2.0 if variant is Variant.THEORY else delta
    segment = scores.window(t, k)
    inner_sizes = (scores.prefix[t] - scores.prefix[t - inner]).astype(np.int64)
    q = left_quantile(segment, 1.0 - alpha)
    psi_inner = _psi_from_size(inner_sizes, alpha, level, variant)
    return _bias_terms(segment, q, inner_sizes, float(psi_inner[-1]), psi_inner, alpha, variant)


def select_window(
    scores: WindowedScores, config: QuantileConfig, t: int | None = None
) -> SelectionTrace:
    """Pick the look-back window minimizing ``bias_proxy + psi``.

    Ties go to the smallest window.

    Parameters
    ----------
    scores : WindowedScores
        Score batches for periods ``1..t``.
    config : QuantileConfig
        Miscoverage level, confidence parameter, constants and window grid.
    t : int, optional
        Current period; defaults to the latest one in ``scores``.

    Returns
    -------
    SelectionTrace
    """
    if scores.n_periods == 0:
        raise ValueError("need at least one period of scores")
    t = scores.n_periods if t is None else t
    scores._check_window(t, 1)
    alpha, delta, variant = config.alpha, config.delta_prime, config.variant
    windows = window_grid(t, config.grid)
    sizes = (scores.prefix[t] - scores.prefix[t - windows]).astype(np.int64)
    segment = scores.window(t, t)

    psi_main = _psi_from_size(sizes, alpha, delta, variant)
    if variant is Variant.THEORY:
        psi_inner = _psi_from_size(sizes, alpha, delta / 2.0, variant)
    else:
        psi_inner = psi_main

    gamma = 1.0 - alpha
    q_hat = np.empty(windows.size)
    phi_hat = np.empty(windows.size)
    for s, n in enumerate(sizes):
        outer = segment[segment.size - n :]
        q = _order_statistic(outer, left_rank(int(n), gamma))
        q_hat[s] = q
        phi_hat[s] = _bias_terms(
            outer, q, sizes[: s + 1], float(psi_inner[s]), psi_inner[: s + 1], alpha, variant
        )
    objective = phi_hat + psi_main
    # np.argmin returns the first minimizer, i.e. the smallest window
    chosen = int(np.argmin(objective))
    return SelectionTrace(
        t=t,
        windows=windows,
        sizes=sizes,
        q_hat=q_hat,
        psi=psi_main,
        phi_hat=phi_hat,
        objective=objective,
        chosen_index=chosen,
    )
