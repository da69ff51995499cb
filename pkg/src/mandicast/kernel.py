"""Forest-as-nearest-neighbor machinery: similarity weights, posterior, evidence,
heuristic price intervals, and kernel-weighted price regression.

A fitted forest induces a similarity between a test vector and each training
sample: the average over trees of the sample's in-bag share of the leaf the
test vector lands in. The weights over all training samples sum to one, so the
weighted label histogram is a probability vector and the weighted price average
is a convex combination of neighbor prices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import DateRange, QuantizedPanel, build_test_vector, FeatureConfig
from .models import CLASS_INDEX, ForestModel, pick_direction


@dataclass
class NeighborWeight:
    sample_index: int
    market_id: str
    step: int
    weight: float
    neighbor_price: float  # Rs per quintal
    step_dates: DateRange | None = None  # dates covered by the neighbor's step
    window_dates: DateRange | None = None  # dates covered by its tau-step feature window


@dataclass
class Interval:
    lower: float
    upper: float
    method: str  # "top_l" or "threshold"
    param: float  # l or omega
    fallback: bool = False  # threshold interval fell back to the single top neighbor

    def contains(self, price: float) -> bool:
        return self.lower <= price <= self.upper

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "method": self.method,
            "param": self.param,
        }


def kernel_weights(
    model: ForestModel,
    x_test: np.ndarray,
    step_dates: list[DateRange] | None = None,
) -> list[NeighborWeight]:
    """Similarity weights of every training sample to x_test; nonzero entries only.

    weight(i) = mean over trees of [in-bag multiplicity of i in the leaf x_test
    reaches] / [in-bag size of that leaf]. Passing the training panel's step
    date ranges fills in absolute dates for each neighbor's step and feature
    window.
    """
    x_test = np.asarray(x_test, dtype=float)
    if x_test.shape != (model.n_features,):
        raise ValueError(
            f"feature vector has shape {x_test.shape}, expected ({model.n_features},)"
        )
    n = len(model.training_samples)
    weights = np.zeros(n)
    for tree in model.trees:
        node = tree.apply(x_test)
        idx = tree.leaf_sample_idx[node]
        mult = tree.leaf_mult[node]
        weights[idx] += mult / tree.leaf_total[node]
    weights /= len(model.trees)

    tau = model.n_features // 2
    out: list[NeighborWeight] = []
    for i in np.flatnonzero(weights):
        sample = model.training_samples[i]
        step_range = window_range = None
        if step_dates is not None:
            step_range = step_dates[sample.step - 1]
            window_range = DateRange(
                start=step_dates[sample.step - 1 - tau].start,
                end=step_dates[sample.step - 2].end,
            )
        out.append(
            NeighborWeight(
                sample_index=int(i),
                market_id=sample.market_id,
                step=sample.step,
                weight=float(weights[i]),
                neighbor_price=sample.price,
                step_dates=step_range,
                window_dates=window_range,
            )
        )
    return out


def posterior(weights: list[NeighborWeight], labels: np.ndarray) -> np.ndarray:
    """Weighted label histogram over (-1, 0, +1); weights must sum to ~1."""
    total = sum(w.weight for w in weights)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"neighbor weights sum to {total}, expected 1")
    eta = np.zeros(3)
    for w in weights:
        eta[CLASS_INDEX[int(labels[w.sample_index])]] += w.weight
    return eta


def classify(eta: np.ndarray) -> int:
    """Most probable direction with the fixed tie preference 0, +1, -1."""
    return pick_direction(np.asarray(eta, dtype=float))


def _selection_order(neighbors: list[NeighborWeight]) -> list[NeighborWeight]:
    return sorted(neighbors, key=lambda w: (-w.weight, w.market_id, w.step))


def interval_top_l(neighbors: list[NeighborWeight], l: int) -> Interval:
    """Price span of the l largest-weight neighbors (ties by market then step)."""
    if not neighbors:
        raise ValueError("interval requires at least one neighbor")
    if l < 1:
        raise ValueError("l must be >= 1")
    chosen = _selection_order(neighbors)[: min(l, len(neighbors))]
    prices = [w.neighbor_price for w in chosen]
    return Interval(lower=min(prices), upper=max(prices), method="top_l", param=l)


def interval_threshold(neighbors: list[NeighborWeight], omega: float) -> Interval:
    """Price span of neighbors with weight >= omega; falls back to the top neighbor."""
    if not neighbors:
        raise ValueError("interval requires at least one neighbor")
    if omega <= 0:
        raise ValueError("omega must be positive")
    chosen = [w for w in neighbors if w.weight >= omega]
    if not chosen:
        top = _selection_order(neighbors)[0]
        return Interval(
            lower=top.neighbor_price,
            upper=top.neighbor_price,
            method="threshold",
            param=omega,
            fallback=True,
        )
    prices = [w.neighbor_price for w in chosen]
    return Interval(lower=min(prices), upper=max(prices), method="threshold", param=omega)


def regress_rfnn(weights: list[NeighborWeight], prices: np.ndarray) -> float:
    """Kernel-weighted average of training prices: the forecasted exact price."""
    total = sum(w.weight for w in weights)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"neighbor weights sum to {total}, expected 1")
    prices = np.asarray(prices, dtype=float)
    return float(sum(w.weight * prices[w.sample_index] for w in weights))


@dataclass
class CalibrationResult:
    l: int
    coverage: float
    alpha: float
    n_points: int
    flagged: bool = False  # no l reached the target coverage


def calibrate_l(
    model: ForestModel,
    price_qp: QuantizedPanel,
    volume_qp: QuantizedPanel,
    alpha: float,
    calibration_fraction: float = 0.2,
) -> CalibrationResult:
    """Smallest l whose top-l intervals cover the realized price at rate >= alpha.

    Calibration points are the most recent `calibration_fraction` of usable
    steps (tau+1..S) per market covered by the model's training samples; the
    model should have been fit on samples from before that split. Coverage is
    non-decreasing in l because top-l intervals are nested, so the smallest
    covering l per point determines the answer. If no l up to the neighbor
    count reaches alpha, the largest useful l is returned, flagged.
    """
    if not 0 <= alpha < 1:
        raise ValueError("alpha must be in [0, 1)")
    tau = model.n_features // 2
    s_total = price_qp.num_steps
    usable = list(range(tau + 1, s_total + 1))
    if not usable:
        raise ValueError("panel too short to calibrate")
    n_cal = max(1, int(np.floor(calibration_fraction * len(usable))))
    cal_steps = usable[-n_cal:]
    markets = sorted({s.market_id for s in model.training_samples})
    config = FeatureConfig(tau=tau, k=1)

    covering_l: list[float] = []
    max_l = 0
    for market_id in markets:
        m = price_qp.market_row(market_id)
        for step in cal_steps:
            x = build_test_vector(price_qp, volume_qp, market_id, config, step)
            neighbors = _selection_order(kernel_weights(model, x))
            max_l = max(max_l, len(neighbors))
            truth = float(price_qp.values[m, step - 1])
            lo = np.inf
            hi = -np.inf
            found = np.inf
            for rank, w in enumerate(neighbors, start=1):
                lo = min(lo, w.neighbor_price)
                hi = max(hi, w.neighbor_price)
                if lo <= truth <= hi:
                    found = rank
                    break
            covering_l.append(found)

    covering = np.array(covering_l)
    n_points = covering.size
    for l in range(1, max_l + 1):
        coverage = float(np.mean(covering <= l))
        if coverage >= alpha:
            return CalibrationResult(l=l, coverage=coverage, alpha=alpha, n_points=n_points)
    coverage = float(np.mean(covering <= max_l))
    return CalibrationResult(
        l=max(max_l, 1), coverage=coverage, alpha=alpha, n_points=n_points, flagged=True
    )


def evidence_to_dicts(neighbors: list[NeighborWeight], top_n: int | None = None) -> list[dict]:
    """Evidence entries sorted by descending weight, as served to clients."""
    ordered = _selection_order(neighbors)
    if top_n is not None:
        ordered = ordered[:top_n]
    return [
        {
            "market_id": w.market_id,
            "step_start_date": w.step_dates.start.isoformat() if w.step_dates else None,
            "step_end_date": w.step_dates.end.isoformat() if w.step_dates else None,
            "window_start_date": w.window_dates.start.isoformat() if w.window_dates else None,
            "window_end_date": w.window_dates.end.isoformat() if w.window_dates else None,
            "weight": w.weight,
            "neighbor_price": w.neighbor_price,
        }
        for w in ordered
    ]
