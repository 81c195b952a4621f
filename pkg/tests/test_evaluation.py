import json
import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from driftconformal.conformal import PredictionInterval
from driftconformal.evaluation import (
    aggregate_runs,
    exact_coverage_gaussian,
    exact_coverage_regression,
    make_report,
    mae_of_coverage,
    mc_coverage_regression,
    normal_cdf,
    summary_document,
    write_summary_json,
)


def iv(center, radius):
    return PredictionInterval(center, radius, radius, "test")


class TestNormalCDF:
    def test_against_quadrature(self):
        density = lambda z: math.exp(-z * z / 2) / math.sqrt(2 * math.pi)
        for x in (-3.0, -1.0, 0.0, 0.5, 1.2816, 2.5):
            value, _ = integrate.quad(density, -np.inf, x, epsabs=1e-14, epsrel=1e-14)
            assert abs(normal_cdf(x) - value) <= 1e-12

    def test_erf_identity(self):
        for x in np.linspace(-6, 6, 49):
            assert abs(normal_cdf(x) - 0.5 * math.erfc(-x / math.sqrt(2))) <= 1e-15


class TestGaussianCoverage:
    def test_central_interval(self):
        expected = 2 * norm.cdf(1.2816) - 1
        assert exact_coverage_gaussian(iv(0.3, 1.2816), 0.3) == pytest.approx(expected, abs=1e-12)
        # the one-sided 0.9 quantile gives a two-sided 0.8 interval
        assert expected == pytest.approx(0.8000, abs=1e-4)
        assert exact_coverage_gaussian(iv(0.0, 1.6449), 0.0) == pytest.approx(0.9000, abs=1e-4)

    def test_degenerate(self):
        assert exact_coverage_gaussian(iv(0.0, 0.0), 0.0) == 0.0
        assert exact_coverage_gaussian(iv(0.0, math.inf), 5.0) == 1.0
        assert exact_coverage_gaussian(iv(0.0, 1e6), 5.0) == 1.0

    def test_negative_radius(self):
        with pytest.raises(ValueError):
            exact_coverage_gaussian(iv(0.0, -1.0), 0.0)

    def test_monotone_and_centered(self):
        radii = np.linspace(0, 4, 41)
        cov = [exact_coverage_gaussian(iv(0.0, r), 0.0) for r in radii]
        assert all(a < b for a, b in zip(cov, cov[1:]))
        for c in np.linspace(-2, 2, 21):
            assert exact_coverage_gaussian(iv(c, 1.0), 0.0) <= exact_coverage_gaussian(iv(0.0, 1.0), 0.0)


class TestRegressionCoverage:
    beta = np.full(5, 0.2)

    def test_everything_and_nothing(self):
        rule_all = lambda x: (np.full(len(x), -np.inf), np.full(len(x), np.inf))
        rule_none = lambda x: (np.full(len(x), 1.0), np.full(len(x), -1.0))
        assert mc_coverage_regression(rule_all, self.beta, seed=0) == 1.0
        assert mc_coverage_regression(rule_none, self.beta, seed=0) == 0.0

    def test_oracle_interval(self):
        beta = self.beta
        rule = lambda x: (x @ beta - 1.6449, x @ beta + 1.6449)
        est = mc_coverage_regression(rule, beta, n_mc=1000, seed=1)
        assert abs(est - 0.90) <= 0.03

    def test_unbiased_against_analytic(self):
        beta = self.beta
        beta_hat = beta + np.array([0.3, -0.2, 0.0, 0.1, 0.4])
        q = 1.5
        rule = lambda x: (x @ beta_hat - q, x @ beta_hat + q)
        estimates = [mc_coverage_regression(rule, beta, n_mc=1000, seed=s) for s in range(200)]
        exact = exact_coverage_regression(q, beta_hat, beta)
        se = math.sqrt(exact * (1 - exact) / (1000 * 200))
        assert abs(np.mean(estimates) - exact) <= 4 * se

    def test_exact_regression_known_beta(self):
        assert exact_coverage_regression(1.6448536269514722, self.beta, self.beta) == pytest.approx(0.9, abs=1e-12)
        assert exact_coverage_regression(math.inf, self.beta, self.beta) == 1.0


class TestMAE:
    def test_examples(self):
        T = 300
        assert mae_of_coverage(np.full(T, 0.9), 0.1, 100) == pytest.approx(0.0, abs=1e-15)
        assert mae_of_coverage(np.ones(T), 0.1, 100) == pytest.approx(0.1)
        alternating = np.where(np.arange(T) % 2 == 0, 0.85, 0.95)
        assert mae_of_coverage(alternating, 0.1, 100) == pytest.approx(0.05)

    def test_burn_in_excluded(self):
        c = np.concatenate([np.zeros(100), np.full(50, 0.9)])
        assert mae_of_coverage(c, 0.1, 100) == pytest.approx(0.0, abs=1e-15)

    def test_too_short(self):
        with pytest.raises(ValueError):
            mae_of_coverage(np.ones(100), 0.1, 100)

    def test_order_invariant(self):
        rng = np.random.default_rng(0)
        c = rng.uniform(size=300)
        tail = c[100:].copy()
        rng.shuffle(tail)
        shuffled = np.concatenate([c[:100], tail])
        assert mae_of_coverage(c, 0.1) == pytest.approx(mae_of_coverage(shuffled, 0.1), rel=1e-12)


class TestAggregation:
    def _report(self, mae_target, seed=0, method="ARW"):
        cov = np.full(200, 0.9 + mae_target)
        return make_report(method, 1, cov, np.full(200, 2.0), 0.1, 100, seed)

    def test_single_is_identity(self):
        r = self._report(0.02)
        assert aggregate_runs([r]) is r

    def test_mean(self):
        agg = aggregate_runs([self._report(0.02, 0), self._report(0.04, 1)])
        assert agg.mae == pytest.approx(0.03)
        assert agg.n_seeds == 2
        assert agg.seeds == (0, 1)
        assert agg.mae_se == pytest.approx(0.01)

    def test_inconsistent(self):
        with pytest.raises(ValueError):
            aggregate_runs([self._report(0.02), self._report(0.02, method="V_1")])
        with pytest.raises(ValueError):
            aggregate_runs([])

    def test_capped_widths(self):
        width = np.full(200, 2.0)
        width[150] = math.inf
        r = make_report("W_0.25", 1, np.full(200, 0.9), width, 0.1, 100)
        assert r.n_capped == 1
        assert r.mean_width == 2.0

    def test_coverage_range(self):
        with pytest.raises(ValueError):
            make_report("ARW", 1, np.full(200, 1.5), np.ones(200), 0.1)

    def test_summary_document(self, tmp_path):
        reports = [self._report(0.01, method="ARW"), self._report(0.05, method="V_1")]
        doc = summary_document(reports, ["ARW", "V_1"], [1])
        assert doc["rows"][0]["mae_pct"] == {"ARW": 1.0, "V_1": 5.0}
        path = tmp_path / "s.json"
        write_summary_json(path, doc)
        assert json.loads(path.read_text()) == doc
