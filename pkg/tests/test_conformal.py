import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftconformal.conformal import (
    ConformityScore,
    PredictionInterval,
    WeightedBaselineConfig,
    arw_prediction_interval,
    fixed_window_interval,
    fixed_window_threshold,
    score_batch,
    weighted_interval,
    weighted_quantile,
    weighted_threshold,
    weighted_thresholds,
)
from driftconformal.quantile_core import QuantileConfig, WindowedScores, left_quantile, select_window

ZERO = ConformityScore.absolute(lambda x: np.zeros(np.shape(x)))


def brute_weighted(values, weights, gamma):
    # cumulative-weight scan over candidate thresholds, +inf atom of weight 1
    total = math.fsum(weights) + 1.0
    for x in sorted(set(values)):
        mass = math.fsum(w for v, w in zip(values, weights) if v <= x)
        if mass >= gamma * total:
            return x
    return math.inf


def random_calibration(rng, t, max_batch=6):
    return WindowedScores.from_batches(
        [rng.exponential(size=int(rng.integers(1, max_batch + 1))) for _ in range(t)]
    )


class TestScores:
    def test_absolute(self):
        assert score_batch(ZERO, [0.0], [3.0])[0] == 3.0
        assert score_batch(ZERO, [0.0], [-3.0])[0] == 3.0

    def test_perfect_predictor(self):
        x = np.linspace(-1, 1, 7)
        s = ConformityScore.absolute(lambda x: 2 * x)
        np.testing.assert_array_equal(score_batch(s, x, 2 * x), np.zeros(7))

    def test_studentized(self):
        s = ConformityScore.studentized(lambda x: np.zeros(np.shape(x)), lambda x: np.full(np.shape(x), 2.0))
        assert score_batch(s, [0.0], [3.0])[0] == 1.5

    def test_bad_scale(self):
        s = ConformityScore.studentized(lambda x: np.zeros(np.shape(x)), lambda x: np.zeros(np.shape(x)))
        with pytest.raises(ValueError):
            score_batch(s, [0.0], [1.0])

    def test_studentized_requires_scale(self):
        with pytest.raises(ValueError):
            ConformityScore(lambda x: x, kind="studentized")

    def test_translation_equivariance(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=20)
        y = rng.normal(size=20)
        base = ConformityScore.absolute(lambda x: 0.5 * x)
        shifted = ConformityScore.absolute(lambda x: 0.5 * x + 7.0)
        np.testing.assert_allclose(score_batch(base, x, y), score_batch(shifted, x, y + 7.0), atol=1e-12)


class TestWeightedQuantile:
    def test_uniform_matches_split_conformal(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(1, 60))
            vals = rng.normal(size=n)
            alpha = float(rng.choice([0.05, 0.1, 0.2, 0.5]))
            ws = WindowedScores.from_batches([vals])
            rank = math.ceil((1 - alpha) * (n + 1))
            expected = math.inf if rank > n else np.sort(vals)[rank - 1]
            assert weighted_threshold(ws, WeightedBaselineConfig(1.0, alpha)) == expected

    def test_vs_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            n = int(rng.integers(1, 30))
            vals = list(rng.integers(0, 15, size=n).astype(float))
            weights = list(rng.uniform(0, 1, size=n))
            gamma = float(rng.uniform(0.05, 0.95))
            assert weighted_quantile(vals, weights, gamma) == brute_weighted(vals, weights, gamma)

    def test_period_weights_vs_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            ws = random_calibration(rng, int(rng.integers(1, 12)))
            rho = float(rng.uniform(0.05, 1.0))
            t = ws.n_periods
            vals, weights = [], []
            for j in range(1, t + 1):
                for u in ws.batch(j):
                    vals.append(float(u))
                    weights.append(rho ** (t - j))
            expected = brute_weighted(vals, weights, 0.9)
            assert weighted_threshold(ws, WeightedBaselineConfig(rho, 0.1)) == expected

    def test_batch_version_agrees(self):
        rng = np.random.default_rng(4)
        rhos = [0.99, 0.9, 0.5, 0.25]
        for _ in range(100):
            ws = random_calibration(rng, int(rng.integers(1, 40)))
            got = weighted_thresholds(ws, rhos, 0.1)
            expected = [weighted_threshold(ws, WeightedBaselineConfig(r, 0.1)) for r in rhos]
            np.testing.assert_array_equal(got, expected)

    def test_tiny_rho_uses_latest_batch(self):
        ws = WindowedScores.from_batches([np.full(50, 100.0), np.arange(1.0, 20.0)])
        # latest batch has 19 scores; with the +inf atom the 0.9 level lands on rank 18
        assert weighted_threshold(ws, WeightedBaselineConfig(1e-300, 0.1)) == 18.0

    def test_small_sample_is_infinite(self):
        ws = WindowedScores.from_batches([[1.0, 2.0, 3.0]])
        assert weighted_threshold(ws, WeightedBaselineConfig(1.0, 0.1)) == math.inf

    def test_rho_validation(self):
        for rho in (0.0, 1.5, -0.1):
            with pytest.raises(ValueError):
                WeightedBaselineConfig(rho)

    def test_not_below_unweighted_pooling(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            t = int(rng.integers(1, 10))
            B = int(rng.integers(1, 8))
            ws = WindowedScores.from_batches([rng.normal(size=B) for _ in range(t)])
            w = weighted_threshold(ws, WeightedBaselineConfig(1.0, 0.1))
            assert w >= fixed_window_threshold(ws, t, 0.1)


class TestIntervals:
    def test_arw_constant_scores(self):
        ws = WindowedScores.from_batches([np.full(5, 2.5)] * 10)
        iv = arw_prediction_interval(ws, QuantileConfig(), ZERO, 0.0)
        assert iv.radius == 2.5
        assert (iv.lower, iv.upper) == (-2.5, 2.5)

    def test_arw_single_period(self):
        ws = WindowedScores.from_batches([np.arange(1.0, 11.0)])
        iv, trace = arw_prediction_interval(ws, QuantileConfig(0.1, 0.1), ZERO, 0.0, return_trace=True)
        assert iv.threshold == 9.0
        assert trace.chosen_k == 1
        assert iv.method == "ARW"

    def test_arw_normal_threshold(self):
        thresholds = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            ws = WindowedScores.from_batches([rng.normal(size=5) for _ in range(1024)])
            thresholds.append(arw_prediction_interval(ws, QuantileConfig(), ZERO, 0.0).threshold)
        err = np.array(thresholds) - 1.2815515655446004
        assert abs(err.mean()) <= 0.1
        # false drift alarms are allowed with probability about delta'
        assert np.mean(np.abs(err) <= 0.1) >= 0.9

    def test_studentized_radius(self):
        ws = WindowedScores.from_batches([np.arange(1.0, 11.0)])
        s = ConformityScore.studentized(lambda x: 3.0, lambda x: 0.5)
        iv = arw_prediction_interval(ws, QuantileConfig(), s, None)
        assert iv.center == 3.0
        assert iv.radius == 4.5

    def test_fixed_window_truncation(self):
        rng = np.random.default_rng(6)
        ws = random_calibration(rng, 7)
        pooled = left_quantile(ws.values, 0.9)
        for k in (7, 8, 1000):
            assert fixed_window_interval(ws, k, 0.1, ZERO, 0.0).threshold == pooled
        assert fixed_window_interval(ws, 1, 0.1, ZERO, 0.0).threshold == left_quantile(ws.batch(7), 0.9)
        with pytest.raises(ValueError):
            fixed_window_threshold(ws, 0, 0.1)

    def test_fixed_window_replays_arw(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            ws = random_calibration(rng, int(rng.integers(1, 80)))
            trace = select_window(ws, QuantileConfig())
            fixed = fixed_window_interval(ws, trace.chosen_k, 0.1, ZERO, 0.0)
            assert fixed.threshold == arw_prediction_interval(ws, QuantileConfig(), ZERO, 0.0).threshold

    def test_weighted_interval_infinite(self):
        ws = WindowedScores.from_batches([[1.0]])
        iv = weighted_interval(ws, WeightedBaselineConfig(0.9), ZERO, 0.0)
        assert iv.capped and math.isinf(iv.width)
        assert 1e300 in iv
        assert iv.method == "W_0.9"

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(8)
        alphas = [0.05, 0.1, 0.2, 0.3, 0.5]
        for _ in range(50):
            ws = random_calibration(rng, int(rng.integers(1, 60)))
            for rule in (
                lambda a: arw_prediction_interval(ws, QuantileConfig(a, 0.1), ZERO, 0.0).threshold,
                lambda a: fixed_window_threshold(ws, 4, a),
                lambda a: weighted_threshold(ws, WeightedBaselineConfig(0.9, a)),
            ):
                values = [rule(a) for a in alphas]
                assert all(x >= y for x, y in zip(values, values[1:]))

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=30),
        st.floats(-5, 5, allow_nan=False),
        st.floats(-20, 20, allow_nan=False),
    )
    def test_membership_matches_score(self, scores, center, y):
        ws = WindowedScores.from_batches([scores])
        s = ConformityScore.absolute(lambda x: center)
        iv = fixed_window_interval(ws, 1, 0.1, s, None)
        assert (y in iv) == (abs(y - center) <= iv.threshold) or math.isclose(abs(y - center), iv.threshold)

    def test_interval_fields(self):
        iv = PredictionInterval(1.0, 2.0, 2.0, "V_4", 4)
        assert (iv.lower, iv.upper, iv.width) == (-1.0, 3.0, 4.0)
        assert not iv.capped
