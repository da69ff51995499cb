"""Time quantization, relative changes, direction labels, neighbor markets, samples.

Steps are 1-indexed to match the panel's time-step convention: step s covers
days (s-1)*q+1 .. s*q and a trailing block shorter than q days is dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from .impute import DensePanel
from .ingest import MarketRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DateRange:
    start: date
    end: date  # inclusive


@dataclass
class QuantizedPanel:
    produce: str
    markets: list[str]
    q: int
    values: np.ndarray  # M x S
    step_dates: list[DateRange]
    kind: str = "price"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.markets), len(self.step_dates)):
            raise ValueError("quantized panel shape mismatch")

    @property
    def num_steps(self) -> int:
        return self.values.shape[1]

    def market_row(self, market_id: str) -> int:
        try:
            return self.markets.index(market_id)
        except ValueError:
            raise KeyError(f"unknown market {market_id!r}") from None


@dataclass
class FeatureConfig:
    tau: int = 10
    k: int = 1  # neighbor markets, including self

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class Sample:
    """One training point: lagged changes and volumes predicting the step-s direction."""

    market_id: str
    step: int  # 1-indexed; >= tau + 1
    features: np.ndarray  # length 2*tau: tau relative changes then tau volumes, oldest first
    direction: int  # -1, 0, +1
    price: float  # quantized price at (market, step), Rs per quintal


def quantize(dense: DensePanel, q: int) -> QuantizedPanel:
    """Average each non-overlapping q-day block; drop the trailing partial block."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if dense.num_days < q:
        raise ValueError(f"panel has {dense.num_days} days, fewer than q={q}")
    s = dense.num_days // q
    trimmed = dense.values[:, : s * q]
    blocks = trimmed.reshape(len(dense.markets), s, q)
    values = blocks.mean(axis=2)
    step_dates = [
        DateRange(
            start=dense.start_date + timedelta(days=i * q),
            end=dense.start_date + timedelta(days=(i + 1) * q - 1),
        )
        for i in range(s)
    ]
    return QuantizedPanel(dense.produce, list(dense.markets), q, values, step_dates, dense.kind)


def relative_changes(qp: QuantizedPanel) -> np.ndarray:
    """Step-over-step relative change; first step is 0 by convention."""
    q = qp.values
    if np.any(q <= 0):
        raise ValueError("relative changes require strictly positive quantized values")
    delta = np.zeros_like(q)
    delta[:, 1:] = (q[:, 1:] - q[:, :-1]) / q[:, :-1]
    return delta


def directions(delta: np.ndarray) -> np.ndarray:
    """Sign labels in {-1, 0, +1}; zero requires exact floating-point equality."""
    delta = np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(delta)):
        raise ValueError("delta must be finite")
    return np.sign(delta).astype(int)


def neighbor_markets(registry: list[MarketRecord], market_id: str, k: int) -> list[str]:
    """The k markets nearest to market_id in (lat, lon) Euclidean distance, self included.

    Ties break by ascending market_id; markets without coordinates are excluded
    from candidacy (logged). The result always contains market_id, first.
    """
    by_id = {m.market_id: m for m in registry}
    if market_id not in by_id:
        raise KeyError(f"market {market_id!r} not in registry")
    if k > len(registry):
        raise ValueError(f"k={k} exceeds registry size {len(registry)}")
    target = by_id[market_id]
    if not target.has_coordinates:
        raise ValueError(f"market {market_id!r} has no coordinates")

    candidates = []
    for rec in registry:
        if rec.market_id == market_id:
            continue
        if not rec.has_coordinates:
            logger.warning("market %s has no coordinates; excluded from neighbor candidacy", rec.market_id)
            continue
        dist = float(np.hypot(rec.latitude - target.latitude, rec.longitude - target.longitude))
        candidates.append((dist, rec.market_id))
    candidates.sort()
    return [market_id] + [mid for _, mid in candidates[: k - 1]]


def _lag_window(row: np.ndarray, step: int, tau: int) -> np.ndarray:
    # steps s-tau .. s-1, oldest first; row is 0-indexed by step-1
    return row[step - 1 - tau : step - 1]


def build_samples(
    price_qp: QuantizedPanel,
    volume_qp: QuantizedPanel,
    target_market: str,
    config: FeatureConfig,
    registry: list[MarketRecord],
) -> list[Sample]:
    """Training samples for target_market pooled over its k nearest markets.

    One sample per (neighbor market, step) for steps tau+1..S: features are the
    tau lagged relative price changes followed by the tau lagged volumes, the
    label is the direction at that step, and the price label is the quantized
    price at that step.
    """
    if price_qp.q != volume_qp.q or price_qp.num_steps != volume_qp.num_steps:
        raise ValueError("price and volume panels must share q and steps")
    s_total = price_qp.num_steps
    if s_total <= config.tau:
        logger.warning(
            "panel has %d steps <= tau=%d; no samples can be built", s_total, config.tau
        )
        return []

    delta = relative_changes(price_qp)
    labels = directions(delta)
    pooled = neighbor_markets(registry, target_market, config.k)

    samples: list[Sample] = []
    for market_id in pooled:
        m = price_qp.market_row(market_id)
        vol_m = volume_qp.market_row(market_id)
        for step in range(config.tau + 1, s_total + 1):
            features = np.concatenate(
                [
                    _lag_window(delta[m], step, config.tau),
                    _lag_window(volume_qp.values[vol_m], step, config.tau),
                ]
            )
            samples.append(
                Sample(
                    market_id=market_id,
                    step=step,
                    features=features,
                    direction=int(labels[m, step - 1]),
                    price=float(price_qp.values[m, step - 1]),
                )
            )
    return samples


def build_test_vector(
    price_qp: QuantizedPanel,
    volume_qp: QuantizedPanel,
    market_id: str,
    config: FeatureConfig,
    as_of_step: int,
) -> np.ndarray:
    """Feature vector for predicting step as_of_step from steps as_of_step-tau..as_of_step-1.

    as_of_step may be num_steps + 1 (the next, yet-unobserved step).
    """
    if as_of_step < config.tau + 1:
        raise ValueError(f"as_of_step={as_of_step} needs at least tau={config.tau} prior steps")
    if as_of_step > price_qp.num_steps + 1:
        raise ValueError(f"as_of_step={as_of_step} beyond available history")
    m = price_qp.market_row(market_id)
    vol_m = volume_qp.market_row(market_id)
    delta = relative_changes(price_qp)
    return np.concatenate(
        [
            _lag_window(delta[m], as_of_step, config.tau),
            _lag_window(volume_qp.values[vol_m], as_of_step, config.tau),
        ]
    )
