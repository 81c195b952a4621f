"""Coverage oracles, MAE of coverage, and multi-seed aggregation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from .conformal import PredictionInterval

__all__ = [
    "normal_cdf",
    "exact_coverage_gaussian",
    "exact_coverage_regression",
    "mc_coverage_regression",
    "mae_of_coverage",
    "CoverageReport",
    "make_report",
    "aggregate_runs",
    "write_per_period_csv",
    "summary_document",
    "write_summary_json",
]

DEFAULT_BURN_IN = 100


def normal_cdf(x):
    """Standard normal CDF (Cephes ``ndtr``; absolute error well below 1e-15)."""
    return ndtr(x)


def exact_coverage_gaussian(interval: PredictionInterval, mu_t: float, sd: float = 1.0) -> float:
    """Probability that ``N(mu_t, sd**2)`` falls in ``interval``."""
    return _gaussian_mass(interval.center, interval.radius, mu_t, sd)


def _gaussian_mass(center, radius, mu, sd=1.0):
    radius = np.asarray(radius, dtype=float)
    if np.any(radius < 0):
        raise ValueError("interval radius must be nonnegative")
    hi = (center + radius - mu) / sd
    lo = (center - radius - mu) / sd
    with np.errstate(invalid="ignore"):
        mass = np.where(np.isinf(radius), 1.0, ndtr(hi) - ndtr(lo))
    return float(mass) if mass.ndim == 0 else mass


def exact_coverage_regression(threshold: float, beta_hat, beta, noise_sd: float = 1.0) -> float:
    """Coverage of ``|y - x'beta_hat| <= threshold`` with ``x ~ N(0, I)``.

    The residual ``x'(beta - beta_hat) + noise`` is centered Gaussian with
    variance ``|beta - beta_hat|**2 + noise_sd**2``.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if math.isinf(threshold):
        return 1.0
    diff = np.asarray(beta, dtype=float) - np.asarray(beta_hat, dtype=float)
    scale = math.sqrt(float(diff @ diff) + noise_sd**2)
    return float(2.0 * ndtr(threshold / scale) - 1.0)


def mc_coverage_regression(
    interval_rule: Callable,
    beta,
    n_mc: int = 1000,
    seed: int | np.random.Generator = 0,
    noise_sd: float = 1.0,
) -> float:
    """Fraction of fresh ``(x, y)`` draws with ``y`` inside the interval at ``x``.

    ``interval_rule(x)`` maps an ``(n, d)`` covariate array to ``(lower, upper)``
    arrays.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    x = rng.standard_normal((n_mc, beta.size))
    y = x @ beta + noise_sd * rng.standard_normal(n_mc)
    lower, upper = interval_rule(x)
    return float(np.mean((lower <= y) & (y <= upper)))


def mae_of_coverage(coverages: Sequence[float], alpha: float, burn_in: int = DEFAULT_BURN_IN) -> float:
    """Mean ``|c_t - (1 - alpha)|`` over periods ``burn_in + 1 .. T``."""
    c = np.asarray(coverages, dtype=float)
    if c.size <= burn_in:
        raise ValueError(f"need more than {burn_in} periods, got {c.size}")
    return float(np.mean(np.abs(c[burn_in:] - (1.0 - alpha))))


@dataclass
class CoverageReport:
    """Coverage of one method with one point predictor.

    ``coverage`` and ``width`` hold one entry per period; widths of capped
    (infinite) intervals are excluded from ``mean_width`` and counted in
    ``n_capped``.
    """

    method: str
    training_window: int
    alpha: float
    burn_in: int
    coverage: np.ndarray
    width: np.ndarray
    mae: float
    mean_width: float
    n_capped: int = 0
    n_seeds: int = 1
    mae_se: float = 0.0
    seeds: tuple = field(default_factory=tuple)

    @property
    def key(self) -> tuple:
        return (self.method, self.training_window)

    def per_period_rows(self):
        for t, (c, w) in enumerate(zip(self.coverage, self.width), start=1):
            yield t, float(c), float(w)


def make_report(
    method: str,
    training_window: int,
    coverage,
    width,
    alpha: float,
    burn_in: int = DEFAULT_BURN_IN,
    seed: int | None = None,
) -> CoverageReport:
    coverage = np.asarray(coverage, dtype=float)
    width = np.asarray(width, dtype=float)
    if np.any((coverage < 0) | (coverage > 1)):
        raise ValueError("coverage values must lie in [0, 1]")
    tail = width[burn_in:]
    finite = tail[np.isfinite(tail)]
    return CoverageReport(
        method=method,
        training_window=training_window,
        alpha=alpha,
        burn_in=burn_in,
        coverage=coverage,
        width=width,
        mae=mae_of_coverage(coverage, alpha, burn_in),
        mean_width=float(finite.mean()) if finite.size else math.inf,
        n_capped=int(tail.size - finite.size),
        seeds=() if seed is None else (seed,),
    )


def aggregate_runs(reports: Sequence[CoverageReport]) -> CoverageReport:
    """Average per-seed reports of one (method, training window) cell."""
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    if len(reports) == 1:
        return reports[0]
    first = reports[0]
    for r in reports[1:]:
        if (r.method, r.training_window, r.alpha, r.burn_in, r.coverage.size) != (
            first.method,
            first.training_window,
            first.alpha,
            first.burn_in,
            first.coverage.size,
        ):
            raise ValueError("cannot aggregate reports with different configurations")
    maes = np.array([r.mae for r in reports])
    n = sum(r.n_seeds for r in reports)
    widths = np.array([r.mean_width for r in reports])
    finite = widths[np.isfinite(widths)]
    return CoverageReport(
        method=first.method,
        training_window=first.training_window,
        alpha=first.alpha,
        burn_in=first.burn_in,
        coverage=np.mean([r.coverage for r in reports], axis=0),
        width=np.mean([r.width for r in reports], axis=0),
        mae=float(maes.mean()),
        mean_width=float(finite.mean()) if finite.size else math.inf,
        n_capped=sum(r.n_capped for r in reports),
        n_seeds=n,
        mae_se=float(maes.std(ddof=1) / math.sqrt(maes.size)),
        seeds=tuple(s for r in reports for s in r.seeds),
    )


def write_per_period_csv(path, rows: Iterable[tuple]) -> None:
    """Rows of ``(seed, training_window, t, method, coverage, width)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "training_window", "t", "method", "coverage", "width"])
        for seed, tw, t, method, cov, width in rows:
            writer.writerow([seed, tw, t, method, repr(float(cov)), repr(float(width))])


def _pct(x: float) -> float:
    return round(100.0 * x, 2)


def summary_document(aggregates: Sequence[CoverageReport], methods: Sequence[str], windows: Sequence[int]) -> dict:
    """MAE matrix (training window x method) in percent, plus widths."""
    cells = {r.key: r for r in aggregates}
    rows = []
    for tw in windows:
        row = {"training_window": tw, "mae_pct": {}, "mae_se_pct": {}, "mean_width": {}, "n_capped": {}}
        for m in methods:
            r = cells[(m, tw)]
            row["mae_pct"][m] = _pct(r.mae)
            row["mae_se_pct"][m] = _pct(r.mae_se)
            row["mean_width"][m] = round(r.mean_width, 4) if math.isfinite(r.mean_width) else None
            row["n_capped"][m] = r.n_capped
        rows.append(row)
    some = next(iter(cells.values()))
    return {
        "alpha": some.alpha,
        "burn_in": some.burn_in,
        "n_seeds": some.n_seeds,
        "methods": list(methods),
        "training_windows": list(windows),
        "rows": rows,
    }


def write_summary_json(path, document: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2, sort_keys=True)
        fh.write("\n")
