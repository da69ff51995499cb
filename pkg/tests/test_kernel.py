"""Similarity weights, posterior, intervals, calibration, kernel regression."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import qp_from_values
from mandicast.kernel import (
    NeighborWeight,
    calibrate_l,
    classify,
    interval_threshold,
    interval_top_l,
    kernel_weights,
    posterior,
    regress_rfnn,
)
from mandicast.models import (
    CLASS_INDEX,
    ForestModel,
    ForestParams,
    Tree,
    fit_forest,
    forest_predict,
)
from test_models import make_samples, random_3class


def leaf_tree(idx, mult, labels):
    """Single-leaf tree holding the given samples with given multiplicities."""
    idx = np.asarray(idx, dtype=np.int64)
    mult = np.asarray(mult, dtype=np.int64)
    counts = np.zeros(3, dtype=np.int64)
    for i, m in zip(idx, mult):
        counts[CLASS_INDEX[labels[i]]] += m
    return Tree(
        feature=np.array([-1], dtype=np.int32),
        threshold=np.array([0.0]),
        left=np.array([-1], dtype=np.int32),
        right=np.array([-1], dtype=np.int32),
        leaf_sample_idx=[idx],
        leaf_mult=[mult],
        leaf_class_counts=counts[None, :],
        leaf_total=np.array([int(mult.sum())], dtype=np.int64),
    )


def manual_forest(trees, inbag, labels, prices=None, n_features=2):
    samples = make_samples(
        np.zeros((len(labels), n_features)), labels,
        prices=prices if prices is not None else 100.0 + np.arange(len(labels)),
    )
    return ForestModel(
        trees=trees,
        inbag=[np.asarray(b) for b in inbag],
        training_samples=samples,
        params=ForestParams(num_trees=len(trees), rng_seed=0),
        n_features=n_features,
    )


class TestKernelWeights:
    def test_single_leaf_multiplicities(self):
        # one tree, leaf holds {a, a, b}: weight(a) = 2/3, weight(b) = 1/3
        labels = [1, -1]
        model = manual_forest(
            [leaf_tree([0, 1], [2, 1], labels)], inbag=[[0, 0, 1]], labels=labels
        )
        weights = {w.sample_index: w.weight for w in kernel_weights(model, np.zeros(2))}
        assert weights == {0: pytest.approx(2 / 3), 1: pytest.approx(1 / 3)}

    def test_average_over_trees(self):
        # two trees landing in pure leaves {a} and {b}: both weights 1/2
        labels = [1, -1]
        model = manual_forest(
            [leaf_tree([0], [3], labels), leaf_tree([1], [3], labels)],
            inbag=[[0, 0, 0], [1, 1, 1]],
            labels=labels,
        )
        weights = {w.sample_index: w.weight for w in kernel_weights(model, np.zeros(2))}
        assert weights == {0: pytest.approx(0.5), 1: pytest.approx(0.5)}

    def test_weights_sum_to_one(self):
        samples = random_3class(120, 6, seed=21)
        model = fit_forest(samples, ForestParams(num_trees=15, rng_seed=4))
        rng = np.random.default_rng(22)
        for _ in range(50):
            weights = kernel_weights(model, rng.normal(size=6))
            assert abs(sum(w.weight for w in weights) - 1.0) < 1e-9
            assert all(w.weight > 0 for w in weights)

    def test_feature_length_mismatch(self):
        samples = random_3class(20, 4, seed=23)
        model = fit_forest(samples, ForestParams(num_trees=2, rng_seed=0))
        with pytest.raises(ValueError):
            kernel_weights(model, np.zeros(3))

    def test_date_ranges_attached(self):
        values = np.cumsum(np.random.default_rng(24).uniform(1, 2, size=(1, 20)), axis=1) + 100
        price = qp_from_values(values, q=2, markets=["M0"])
        volume = qp_from_values(np.ones_like(values), q=2, markets=["M0"], kind="volume")
        from mandicast.features import FeatureConfig, build_samples
        from mandicast.ingest import MarketRecord

        registry = [MarketRecord("M0", "m", 0.0, 0.0, "S")]
        samples = build_samples(price, volume, "M0", FeatureConfig(tau=3, k=1), registry)
        model = fit_forest(samples, ForestParams(num_trees=3, rng_seed=0))
        weights = kernel_weights(model, samples[0].features, step_dates=price.step_dates)
        for w in weights:
            assert w.step_dates == price.step_dates[w.step - 1]
            assert w.window_dates.start == price.step_dates[w.step - 4].start
            assert w.window_dates.end == price.step_dates[w.step - 2].end


class TestPosterior:
    def test_split_weights(self):
        weights = [
            NeighborWeight(0, "A", 11, 0.5, 1000.0),
            NeighborWeight(1, "B", 12, 0.5, 2000.0),
        ]
        eta = posterior(weights, np.array([1, -1]))
        np.testing.assert_allclose(eta, [0.5, 0.0, 0.5])

    def test_single_neighbor(self):
        weights = [NeighborWeight(0, "A", 11, 1.0, 1000.0)]
        eta = posterior(weights, np.array([0]))
        np.testing.assert_allclose(eta, [0.0, 1.0, 0.0])

    def test_matches_per_tree_leaf_average_on_small_fixture(self):
        # brute force: average per-tree leaf class proportions directly
        samples = random_3class(5, 3, seed=25)
        model = fit_forest(samples, ForestParams(num_trees=3, rng_seed=7))
        labels = model.labels
        rng = np.random.default_rng(26)
        for _ in range(20):
            x = rng.normal(size=3)
            brute = np.zeros(3)
            for tree in model.trees:
                node = tree.apply(x)
                brute += tree.leaf_class_counts[node] / tree.leaf_total[node]
            brute /= len(model.trees)
            eta = posterior(kernel_weights(model, x), labels)
            np.testing.assert_allclose(eta, brute, atol=1e-12)

    def test_unnormalized_weights_rejected(self):
        weights = [NeighborWeight(0, "A", 11, 0.4, 1000.0)]
        with pytest.raises(ValueError):
            posterior(weights, np.array([1]))


class TestClassify:
    def test_argmax(self):
        assert classify(np.array([0.2, 0.3, 0.5])) == 1

    def test_up_down_tie_goes_up(self):
        assert classify(np.array([0.5, 0.0, 0.5])) == 1

    def test_equivalence_with_forest_vote(self):
        samples = random_3class(100, 6, seed=27)
        rng = np.random.default_rng(28)
        for num_trees in (1, 5, 20):
            model = fit_forest(samples, ForestParams(num_trees=num_trees, rng_seed=9))
            labels = model.labels
            for _ in range(100):
                x = rng.normal(size=6)
                via_kernel = classify(posterior(kernel_weights(model, x), labels))
                direct, _ = forest_predict(model, x)
                assert via_kernel == direct


def weight_fixture():
    return [
        NeighborWeight(0, "A", 11, 0.5, 1000.0),
        NeighborWeight(1, "B", 12, 0.3, 2000.0),
        NeighborWeight(2, "C", 13, 0.2, 1500.0),
    ]


class TestIntervals:
    def test_top_two(self):
        interval = interval_top_l(weight_fixture(), 2)
        assert (interval.lower, interval.upper) == (1000.0, 2000.0)

    def test_top_one_degenerate(self):
        interval = interval_top_l(weight_fixture(), 1)
        assert (interval.lower, interval.upper) == (1000.0, 1000.0)

    def test_l_beyond_count_spans_all(self):
        interval = interval_top_l(weight_fixture(), 5)
        assert (interval.lower, interval.upper) == (1000.0, 2000.0)

    def test_threshold_selection(self):
        interval = interval_threshold(weight_fixture(), 0.25)
        assert (interval.lower, interval.upper) == (1000.0, 2000.0)
        assert not interval.fallback

    def test_threshold_fallback(self):
        interval = interval_threshold(weight_fixture(), 0.6)
        assert (interval.lower, interval.upper) == (1000.0, 1000.0)
        assert interval.fallback

    def test_threshold_to_zero_spans_all(self):
        interval = interval_threshold(weight_fixture(), 1e-12)
        assert (interval.lower, interval.upper) == (1000.0, 2000.0)

    def test_empty_neighbors_rejected(self):
        with pytest.raises(ValueError):
            interval_top_l([], 1)

    @given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=50)
    def test_nesting_in_l(self, l, seed):
        rng = np.random.default_rng(seed)
        n = 12
        raw = rng.random(n)
        raw /= raw.sum()
        neighbors = [
            NeighborWeight(i, f"M{i}", 11 + i, float(raw[i]), float(rng.uniform(500, 5000)))
            for i in range(n)
        ]
        inner = interval_top_l(neighbors, l)
        outer = interval_top_l(neighbors, l + 1)
        assert outer.lower <= inner.lower and inner.upper <= outer.upper

    def test_nesting_in_omega(self):
        neighbors = weight_fixture()
        widths = []
        for omega in (0.6, 0.35, 0.25, 0.1):
            interval = interval_threshold(neighbors, omega)
            widths.append((interval.lower, interval.upper))
        for (lo1, hi1), (lo2, hi2) in zip(widths, widths[1:]):
            assert lo2 <= lo1 and hi1 <= hi2


class TestRegressRfnn:
    def test_even_split(self):
        weights = [
            NeighborWeight(0, "A", 11, 0.5, 1000.0),
            NeighborWeight(1, "B", 12, 0.5, 2000.0),
        ]
        assert regress_rfnn(weights, np.array([1000.0, 2000.0])) == 1500.0

    def test_single_neighbor(self):
        weights = [NeighborWeight(0, "A", 11, 1.0, 1234.0)]
        assert regress_rfnn(weights, np.array([1234.0])) == 1234.0

    def test_convex_combination_500_fixtures(self):
        rng = np.random.default_rng(29)
        for _ in range(500):
            n = rng.integers(1, 15)
            raw = rng.random(n)
            raw /= raw.sum()
            prices = rng.uniform(100, 5000, size=n)
            weights = [
                NeighborWeight(i, f"M{i}", 11 + i, float(raw[i]), float(prices[i]))
                for i in range(n)
            ]
            pred = regress_rfnn(weights, prices)
            assert prices.min() - 1e-9 <= pred <= prices.max() + 1e-9

    def test_permutation_invariance(self):
        rng = np.random.default_rng(30)
        raw = rng.random(8)
        raw /= raw.sum()
        prices = rng.uniform(100, 5000, size=8)
        weights = [
            NeighborWeight(i, f"M{i}", 11 + i, float(raw[i]), float(prices[i]))
            for i in range(8)
        ]
        forward = regress_rfnn(weights, prices)
        backward = regress_rfnn(list(reversed(weights)), prices)
        assert forward == pytest.approx(backward, abs=1e-12)


class TestCalibrateL:
    def _fitted(self, seed=31, steps=60):
        rng = np.random.default_rng(seed)
        t = np.arange(steps)
        values = 1000 + 300 * np.sin(2 * np.pi * t / 15) + rng.normal(0, 20, size=(2, steps))
        values = np.maximum(values, 1.0)
        vol = np.maximum(3 + np.cos(2 * np.pi * t / 15) + rng.normal(0, 0.1, size=(2, steps)), 0)
        price = qp_from_values(values, markets=["M0", "M1"])
        volume = qp_from_values(vol, markets=["M0", "M1"], kind="volume")
        from mandicast.features import FeatureConfig, build_samples
        from mandicast.ingest import MarketRecord

        registry = [MarketRecord("M0", "a", 0.0, 0.0, "S"), MarketRecord("M1", "b", 0.0, 0.1, "S")]
        config = FeatureConfig(tau=5, k=2)
        samples = build_samples(price, volume, "M0", config, registry)
        usable = steps - config.tau
        cutoff = steps - max(1, int(0.2 * usable))
        fit_samples = [s for s in samples if s.step <= cutoff]
        model = fit_forest(fit_samples, ForestParams(num_trees=20, rng_seed=0))
        return model, price, volume

    def test_alpha_zero_gives_l1(self):
        model, price, volume = self._fitted()
        result = calibrate_l(model, price, volume, alpha=0.0)
        assert result.l == 1

    def test_coverage_nondecreasing_in_l(self):
        model, price, volume = self._fitted()
        from mandicast.features import FeatureConfig, build_test_vector

        tau = model.n_features // 2
        coverage_at = []
        steps = list(range(price.num_steps - 8, price.num_steps + 1))
        for l in range(1, 12):
            hits = 0
            total = 0
            for step in steps:
                x = build_test_vector(price, volume, "M0", FeatureConfig(tau=tau, k=1), step)
                interval = interval_top_l(kernel_weights(model, x), l)
                truth = price.values[0, step - 1]
                hits += interval.contains(truth)
                total += 1
            coverage_at.append(hits / total)
        assert all(b >= a - 1e-12 for a, b in zip(coverage_at, coverage_at[1:]))

    def test_achieves_target_on_seasonal_panel(self):
        model, price, volume = self._fitted()
        result = calibrate_l(model, price, volume, alpha=0.8)
        assert not result.flagged
        assert result.coverage >= 0.8

    def test_unreachable_alpha_flagged(self):
        # a panel whose truth lies far outside all neighbor prices
        model, price, volume = self._fitted()
        inflated = qp_from_values(price.values * 100.0, markets=list(price.markets))
        result = calibrate_l(model, inflated, volume, alpha=0.9)
        assert result.flagged
        assert result.coverage < 0.9
