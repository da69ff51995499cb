"""Metrics, walk-forward CV, no-lookahead instrumentation, sweeps."""

from datetime import date, timedelta

import numpy as np
import pytest

from conftest import START, make_seasonal_bundle, sparse_from_values
from mandicast.evaluate import (
    Candidate,
    CvConfig,
    LookaheadError,
    PanelBundle,
    assert_no_lookahead,
    balanced_accuracy,
    candidates_from_grid,
    eval_report,
    raw_accuracy,
    rmse,
    score_step,
    sweep,
    time_series_cv,
)
from mandicast.features import DateRange, Sample
from mandicast.ingest import MarketRecord


class TestRawAccuracy:
    def test_perfect(self):
        assert raw_accuracy([1, -1, 0], [1, -1, 0]) == 1.0

    def test_three_of_four(self):
        assert raw_accuracy([1, 1, -1, 0], [1, -1, -1, 0]) == 0.75

    def test_all_wrong(self):
        assert raw_accuracy([1, 1], [-1, -1]) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            raw_accuracy([], [])


class TestBalancedAccuracy:
    def test_per_class_mean(self):
        # class +1: 1/2, class -1: 1, class 0: 1 -> 2.5/3
        assert balanced_accuracy([1, 1, -1, 0], [1, -1, -1, 0]) == pytest.approx(2.5 / 3)

    def test_single_present_class(self):
        assert balanced_accuracy([1, 1, 1], [1, 1, 1]) == 1.0

    def test_uniform_random_expectation(self):
        rng = np.random.default_rng(40)
        truth = np.tile([-1, 0, 1], 4000)  # 12000 balanced labels
        pred = rng.choice([-1, 0, 1], size=truth.size)
        assert balanced_accuracy(truth, pred) == pytest.approx(1 / 3, abs=0.05)

    def test_bounds_and_weighted_identity(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            truth = rng.choice([-1, 0, 1], size=60)
            pred = rng.choice([-1, 0, 1], size=60)
            bal = balanced_accuracy(truth, pred)
            per_class = {c: np.mean(pred[truth == c] == c) for c in np.unique(truth)}
            counts = {c: np.sum(truth == c) for c in per_class}
            weighted = sum(per_class[c] * counts[c] for c in per_class) / len(truth)
            assert min(per_class.values()) - 1e-12 <= bal <= 1.0
            assert raw_accuracy(truth, pred) == pytest.approx(weighted)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(42)
        truth = rng.choice([-1, 0, 1], size=40)
        pred = rng.choice([-1, 0, 1], size=40)
        perm = rng.permutation(40)
        assert balanced_accuracy(truth, pred) == pytest.approx(
            balanced_accuracy(truth[perm], pred[perm])
        )
        assert raw_accuracy(truth, pred) == pytest.approx(raw_accuracy(truth[perm], pred[perm]))


class TestRmse:
    def test_zero_on_equal(self):
        assert rmse([1000.0], [1000.0]) == 0.0

    def test_unit_conversion(self):
        # 100 Rs/quintal error = 1 Rs/kg
        assert rmse([1000.0], [1100.0]) == pytest.approx(1.0)

    def test_symmetric_errors(self):
        assert rmse([1000.0, 1000.0], [1100.0, 900.0]) == pytest.approx(1.0)


class TestScoreStep:
    def test_random_predictions_expectation(self):
        # raw -> 1/3 and balanced -> 1/3 under uniform predictions on balanced truth
        rng = np.random.default_rng(43)
        scores = [
            score_step(np.tile([-1, 0, 1], 40), rng.choice([-1, 0, 1], size=120))
            for _ in range(200)
        ]
        assert np.mean(scores) == pytest.approx(2 / 3, abs=0.1)


class TestEvalReport:
    def test_fields(self):
        report = eval_report([1, -1, 0, 1], [1, -1, 1, 1], [1000.0], [1100.0])
        assert report.raw_accuracy == 0.75
        assert report.n_predictions == 4
        assert report.rmse == pytest.approx(1.0)
        assert report.per_class == {-1: 1.0, 0: 0.0, 1: 1.0}
        assert report.balanced_accuracy == pytest.approx(
            np.mean(list(report.per_class.values()))
        )


class TestNoLookahead:
    def test_assertion_fires_on_leak(self):
        step_dates = [
            DateRange(START + timedelta(days=i), START + timedelta(days=i)) for i in range(10)
        ]
        sample = Sample("A", step=10, features=np.zeros(4), direction=0, price=100.0)
        assert_no_lookahead([sample], step_dates, START + timedelta(days=10))  # day 9 < day 10
        with pytest.raises(LookaheadError):
            assert_no_lookahead([sample], step_dates, START + timedelta(days=9))


def small_bundle(days=100, n_markets=4, seed=50):
    fixture = make_seasonal_bundle(
        n_markets=n_markets, days=days, missing=0.15, noise=0.1, seed=seed
    )
    return fixture.bundle


def constant_bundle(days=80, n_markets=3):
    values = np.full((n_markets, days), 500.0)
    volumes = np.full((n_markets, days), 3.0)
    registry = [
        MarketRecord(f"M{i:02d}", f"m{i}", 20.0 + i * 0.5, 84.0, "S") for i in range(n_markets)
    ]
    return PanelBundle(
        price=sparse_from_values(values, markets=[m.market_id for m in registry]),
        volume=sparse_from_values(
            volumes, markets=[m.market_id for m in registry], kind="volume"
        ),
        registry=registry,
    )


def cv_config(days, grid=None, q=7, tau=3, **kwargs):
    return CvConfig(
        t1=START + timedelta(days=days - 21),
        t2=START + timedelta(days=days - 1),
        grid=grid or {"max_rank": [3], "k": [2], "C": [1.0], "num_trees": [5]},
        q=q,
        tau=tau,
        **kwargs,
    )


class TestTimeSeriesCv:
    def test_constant_panel_scores_two(self):
        bundle = constant_bundle()
        config = cv_config(80)
        result = time_series_cv(bundle, config, Candidate(3, 2, 1.0, 5))
        assert result.n_dates_used >= 2
        assert result.mean_score == pytest.approx(2.0)

    def test_lookahead_guard_passes_normally(self):
        bundle = small_bundle()
        result = time_series_cv(bundle, cv_config(100), Candidate(3, 2, 1.0, 5))
        assert result.n_dates_used >= 2

    def test_deliberate_leak_trips_assertion(self):
        bundle = small_bundle()
        config = cv_config(100, q=1, tau=5)
        with pytest.raises(LookaheadError):
            time_series_cv(bundle, config, Candidate(3, 2, 1.0, 5), leak_days=1)

    def test_insufficient_history_dates_skipped(self):
        bundle = small_bundle(days=40)
        config = CvConfig(
            t1=START + timedelta(days=2),  # earlier than tau+1 steps of history
            t2=START + timedelta(days=39),
            grid={"max_rank": [3], "k": [2], "C": [1.0], "num_trees": [3]},
            q=7,
            tau=3,
        )
        result = time_series_cv(bundle, config, Candidate(3, 2, 1.0, 3))
        assert result.n_dates_skipped >= 1

    def test_frozen_imputation_flagged_approximate(self):
        bundle = small_bundle()
        config = cv_config(100, frozen_imputation=True)
        result = time_series_cv(bundle, config, Candidate(3, 2, 1.0, 5))
        assert result.approximate


class TestSweep:
    def test_single_point_grid(self):
        bundle = constant_bundle()
        config = cv_config(80)
        result = sweep(bundle, config)
        assert result.best == Candidate(3, 2, 1.0, 5)
        assert len(result.table) == 1

    def test_table_rows_equal_grid_product(self):
        bundle = constant_bundle()
        grid = {"max_rank": [2, 3], "k": [1, 2], "C": [1.0], "num_trees": [2, 4]}
        config = cv_config(80, grid=grid)
        result = sweep(bundle, config)
        assert len(result.table) == 8
        csv_text = result.to_csv()
        lines = csv_text.strip().splitlines()
        assert lines[0] == "candidate_id,max_rank,k,C,num_trees,mean_score,n_dates_used"
        assert len(lines) == 9

    def test_extra_trees_win_when_they_help(self):
        # frozen noisy fixture where the single tree demonstrably underperforms
        fixture = make_seasonal_bundle(n_markets=6, days=150, missing=0.15, noise=1.0, seed=51)
        grid = {"max_rank": [4], "k": [3], "C": [1.0], "num_trees": [1, 25]}
        config = CvConfig(
            t1=START + timedelta(days=107),
            t2=START + timedelta(days=149),
            grid=grid,
            q=7,
            tau=3,
        )
        result = sweep(fixture.bundle, config)
        assert result.best.num_trees == 25
        by_trees = {row.candidate.num_trees: row.mean_score for row in result.table}
        assert by_trees[25] > by_trees[1]

    def test_grid_order_and_tie_break(self):
        cands = candidates_from_grid(
            {"max_rank": [1, 2], "k": [1], "C": [0.5], "num_trees": [3]}
        )
        assert cands[0] == Candidate(1, 1, 0.5, 3)
        bundle = constant_bundle()
        config = cv_config(
            80, grid={"max_rank": [2, 3], "k": [1], "C": [1.0], "num_trees": [2]}
        )
        result = sweep(bundle, config)  # constant panel: all candidates tie at 2.0
        assert result.best == Candidate(2, 1, 1.0, 2)
