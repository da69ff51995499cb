"""Accuracy metrics, walk-forward time-series cross-validation, and grid sweeps.

The CV harness retrains (imputation included, unless frozen) on data strictly
before each validation date and predicts the direction of the step containing
that date for every target market. A provenance assertion rejects any training
sample whose latest contributing day reaches the validation date.
"""

from __future__ import annotations

import io
import csv
import itertools
import logging
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from .features import (
    DateRange,
    FeatureConfig,
    QuantizedPanel,
    Sample,
    build_samples,
    build_test_vector,
    directions,
    quantize,
    relative_changes,
)
from .impute import ImputeConfig, soft_impute
from .ingest import MarketRecord, SparsePanel
from .models import (
    ForestParams,
    fit_forest,
    fit_logistic,
    forest_predict,
    logistic_predict,
)

logger = logging.getLogger(__name__)


class LookaheadError(AssertionError):
    """A training sample's provenance date reached the validation date."""


def raw_accuracy(truth, pred) -> float:
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.size == 0 or truth.shape != pred.shape:
        raise ValueError("truth and pred must be equal-length and nonempty")
    return float(np.mean(truth == pred))


def balanced_accuracy(truth, pred) -> float:
    """Mean of per-class raw accuracies over the classes present in truth."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.size == 0 or truth.shape != pred.shape:
        raise ValueError("truth and pred must be equal-length and nonempty")
    per_class = [np.mean(pred[truth == c] == c) for c in np.unique(truth)]
    return float(np.mean(per_class))


def rmse(truth_prices, pred_prices) -> float:
    """Root mean squared error in Rs/kg for inputs in Rs per quintal."""
    truth_prices = np.asarray(truth_prices, dtype=float)
    pred_prices = np.asarray(pred_prices, dtype=float)
    if truth_prices.size == 0 or truth_prices.shape != pred_prices.shape:
        raise ValueError("inputs must be equal-length and nonempty")
    return float(np.sqrt(np.mean((truth_prices - pred_prices) ** 2)) / 100.0)


def score_step(truth, pred) -> float:
    """Per-date validation score: raw accuracy plus balanced accuracy."""
    return raw_accuracy(truth, pred) + balanced_accuracy(truth, pred)


@dataclass
class EvalReport:
    raw_accuracy: float
    balanced_accuracy: float
    rmse: float | None
    per_class: dict[int, float]
    n_predictions: int

    def to_dict(self) -> dict:
        return {
            "raw_accuracy": self.raw_accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "rmse_rs_per_kg": self.rmse,
            "per_class_accuracy": {str(k): v for k, v in self.per_class.items()},
            "n_predictions": self.n_predictions,
        }


def eval_report(truth, pred, truth_prices=None, pred_prices=None) -> EvalReport:
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    per_class = {int(c): float(np.mean(pred[truth == c] == c)) for c in np.unique(truth)}
    err = None
    if truth_prices is not None and pred_prices is not None:
        err = rmse(truth_prices, pred_prices)
    return EvalReport(
        raw_accuracy=raw_accuracy(truth, pred),
        balanced_accuracy=balanced_accuracy(truth, pred),
        rmse=err,
        per_class=per_class,
        n_predictions=int(truth.size),
    )


@dataclass(frozen=True)
class Candidate:
    max_rank: int
    k: int
    C: float
    num_trees: int


@dataclass
class PanelBundle:
    """Raw material for the CV harness: sparse panels plus the market registry."""

    price: SparsePanel
    volume: SparsePanel
    registry: list[MarketRecord]


@dataclass
class CvConfig:
    t1: date
    t2: date
    grid: dict[str, list]  # keys: max_rank, k, C, num_trees
    q: int
    tau: int
    classifier: str = "forest"  # or "logistic"
    frozen_imputation: bool = False
    target_markets: list[str] | None = None
    impute_rel_tol: float = 1e-4
    impute_max_iters: int = 100
    truth_max_rank: int | None = None  # imputation rank for the shared truth panel
    seed: int = 0

    def __post_init__(self):
        if self.t1 >= self.t2:
            raise ValueError("t1 must precede t2")
        if self.classifier not in ("forest", "logistic"):
            raise ValueError(f"unknown classifier {self.classifier!r}")


@dataclass
class CvResult:
    mean_score: float
    n_dates_used: int
    n_dates_skipped: int
    approximate: bool = False  # frozen-imputation shortcut was used


def sample_provenance(sample: Sample, step_dates: list[DateRange]) -> date:
    """Latest calendar day contributing to a sample (its label step's last day)."""
    return step_dates[sample.step - 1].end


def assert_no_lookahead(samples: list[Sample], step_dates: list[DateRange], cutoff: date):
    """Raise LookaheadError if any sample's provenance reaches the cutoff date."""
    for s in samples:
        prov = sample_provenance(s, step_dates)
        if prov >= cutoff:
            raise LookaheadError(
                f"sample at ({s.market_id}, step {s.step}) has provenance {prov} >= "
                f"validation date {cutoff}"
            )


def _slice_panel(panel: SparsePanel, num_days: int) -> SparsePanel:
    return SparsePanel(
        panel.produce,
        list(panel.markets),
        panel.start_date,
        num_days,
        panel.values[:, :num_days],
        panel.kind,
    )


def _impute_pair(
    bundle: PanelBundle, num_days: int, max_rank: int, config: CvConfig
) -> tuple[QuantizedPanel, QuantizedPanel]:
    m = len(bundle.price.markets)
    rank = min(max_rank, m, num_days)
    icfg = ImputeConfig(
        max_rank=rank,
        rel_tol=config.impute_rel_tol,
        max_iters=config.impute_max_iters,
        rng_seed=config.seed,
    )
    price_dense, _ = soft_impute(_slice_panel(bundle.price, num_days), icfg)
    volume_dense, _ = soft_impute(_slice_panel(bundle.volume, num_days), icfg)
    return quantize(price_dense, config.q), quantize(volume_dense, config.q)


def _truth_labels(bundle: PanelBundle, config: CvConfig) -> QuantizedPanel:
    """One fixed-configuration imputation of the full range, used only for scoring."""
    m = len(bundle.price.markets)
    rank = config.truth_max_rank or min(m, bundle.price.num_days, 10)
    icfg = ImputeConfig(
        max_rank=min(rank, m, bundle.price.num_days),
        rel_tol=config.impute_rel_tol,
        max_iters=config.impute_max_iters,
        rng_seed=config.seed,
    )
    dense, _ = soft_impute(bundle.price, icfg)
    return quantize(dense, config.q)


def _fit_and_predict(
    samples: list[Sample], x: np.ndarray, candidate: Candidate, config: CvConfig
) -> int:
    if config.classifier == "forest":
        model = fit_forest(
            samples, ForestParams(num_trees=candidate.num_trees, rng_seed=config.seed)
        )
        return forest_predict(model, x)[0]
    model = fit_logistic(samples, C=candidate.C)
    return logistic_predict(model, x)[0]


def time_series_cv(
    bundle: PanelBundle,
    config: CvConfig,
    candidate: Candidate,
    leak_days: int = 0,
) -> CvResult:
    """Mean of per-date (raw + balanced) scores over dates t1..t2 stepped by q.

    For each date t the model trains only on data from days strictly before t
    (imputation re-run on that slice unless frozen_imputation) and predicts the
    direction of the step containing t for every target market. Dates without
    enough history are skipped and counted. `leak_days` deliberately widens the
    training slice past t; it exists so tests can verify the lookahead guard.
    """
    start = bundle.price.start_date
    markets = config.target_markets or [m.market_id for m in bundle.registry]
    fconfig = FeatureConfig(tau=config.tau, k=candidate.k)
    truth_qp = _truth_labels(bundle, config)
    truth_dirs = directions(relative_changes(truth_qp))

    frozen = None
    if config.frozen_imputation:
        frozen = _impute_pair(bundle, bundle.price.num_days, candidate.max_rank, config)

    scores: list[float] = []
    skipped = 0
    t = config.t1
    while t <= config.t2:
        days_before = (t - start).days
        s_t = days_before // config.q + 1  # 1-indexed step containing t
        history_steps = days_before // config.q
        if history_steps < config.tau + 1 or s_t > truth_qp.num_steps:
            skipped += 1
            t += timedelta(days=config.q)
            continue
        avail = min(days_before + leak_days, bundle.price.num_days)
        if frozen is not None:
            n_steps = avail // config.q
            price_qp = _truncate_steps(frozen[0], n_steps)
            volume_qp = _truncate_steps(frozen[1], n_steps)
        else:
            price_qp, volume_qp = _impute_pair(bundle, avail, candidate.max_rank, config)

        truths = []
        preds = []
        for market_id in markets:
            samples = build_samples(price_qp, volume_qp, market_id, fconfig, bundle.registry)
            assert_no_lookahead(samples, price_qp.step_dates, t)
            x = build_test_vector(price_qp, volume_qp, market_id, fconfig, s_t)
            preds.append(_fit_and_predict(samples, x, candidate, config))
            truths.append(int(truth_dirs[truth_qp.market_row(market_id), s_t - 1]))
        scores.append(score_step(truths, preds))
        t += timedelta(days=config.q)

    if not scores:
        return CvResult(float("nan"), 0, skipped, approximate=config.frozen_imputation)
    return CvResult(
        mean_score=float(np.mean(scores)),
        n_dates_used=len(scores),
        n_dates_skipped=skipped,
        approximate=config.frozen_imputation,
    )


def _truncate_steps(qp: QuantizedPanel, n_steps: int) -> QuantizedPanel:
    return QuantizedPanel(
        qp.produce, list(qp.markets), qp.q, qp.values[:, :n_steps], qp.step_dates[:n_steps], qp.kind
    )


@dataclass
class SweepRow:
    candidate_id: int
    candidate: Candidate
    mean_score: float
    n_dates_used: int


@dataclass
class SweepResult:
    best: Candidate
    table: list[SweepRow]
    approximate: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["candidate_id", "max_rank", "k", "C", "num_trees", "mean_score", "n_dates_used"]
        )
        for row in self.table:
            c = row.candidate
            writer.writerow(
                [row.candidate_id, c.max_rank, c.k, c.C, c.num_trees, row.mean_score, row.n_dates_used]
            )
        return buf.getvalue()


def candidates_from_grid(grid: dict[str, list]) -> list[Candidate]:
    """Cartesian product in (max_rank, k, C, num_trees) order; first-in-grid wins ties."""
    keys = ("max_rank", "k", "C", "num_trees")
    missing = [key for key in keys if key not in grid or not grid[key]]
    if missing:
        raise ValueError(f"grid missing values for {missing}")
    return [
        Candidate(max_rank=r, k=k, C=c, num_trees=n)
        for r, k, c, n in itertools.product(*(grid[key] for key in keys))
    ]


def sweep(bundle: PanelBundle, config: CvConfig) -> SweepResult:
    """Exhaustive grid evaluation; the best candidate has the highest mean score."""
    cands = candidates_from_grid(config.grid)
    table: list[SweepRow] = []
    best_idx = 0
    best_score = -np.inf
    for i, cand in enumerate(cands):
        result = time_series_cv(bundle, config, cand)
        table.append(SweepRow(i, cand, result.mean_score, result.n_dates_used))
        logger.info("candidate %d/%d %s -> %.4f", i + 1, len(cands), cand, result.mean_score)
        if np.isfinite(result.mean_score) and result.mean_score > best_score:
            best_score = result.mean_score
            best_idx = i
    return SweepResult(best=cands[best_idx], table=table, approximate=config.frozen_imputation)
