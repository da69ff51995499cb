"""Shared fixtures: tiny registries, panel factories, and the seeded seasonal bundle."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np
import pytest

from mandicast.evaluate import PanelBundle
from mandicast.features import DateRange, QuantizedPanel
from mandicast.impute import DensePanel
from mandicast.ingest import MarketRecord, SparsePanel

START = date(2016, 1, 1)


def make_registry(n: int) -> list[MarketRecord]:
    """n markets on a 5-column grid; phase-friendly coordinates."""
    records = []
    for i in range(n):
        records.append(
            MarketRecord(
                market_id=f"M{i:02d}",
                name=f"Market {i}",
                latitude=20.0 + (i % 5) * 0.5,
                longitude=84.0 + (i // 5) * 0.5,
                state="Odisha",
            )
        )
    return records


def qp_from_values(values, q=1, start=START, kind="price", markets=None, produce="tomato"):
    values = np.asarray(values, dtype=float)
    m, s = values.shape
    markets = markets or [f"M{i:02d}" for i in range(m)]
    step_dates = [
        DateRange(start + timedelta(days=i * q), start + timedelta(days=(i + 1) * q - 1))
        for i in range(s)
    ]
    return QuantizedPanel(produce, markets, q, values, step_dates, kind)


def dense_from_values(values, start=START, kind="price", markets=None, produce="tomato"):
    values = np.asarray(values, dtype=float)
    m, t = values.shape
    markets = markets or [f"M{i:02d}" for i in range(m)]
    return DensePanel(produce, markets, start, t, values, kind)


def sparse_from_values(values, start=START, kind="price", markets=None, produce="tomato"):
    values = np.asarray(values, dtype=float)
    m, t = values.shape
    markets = markets or [f"M{i:02d}" for i in range(m)]
    return SparsePanel(produce, markets, start, t, values, kind)


@dataclass
class SeasonalFixture:
    bundle: PanelBundle
    true_price: np.ndarray  # noiseless+noise dense prices before masking
    true_volume: np.ndarray
    registry: list[MarketRecord]


def make_seasonal_bundle(
    n_markets: int = 20,
    days: int = 730,
    missing: float = 0.2,
    noise: float = 0.1,
    seed: int = 7,
    periods: tuple[float, ...] = (15.0, 20.0, 25.0, 30.0),
    amplitude: float = 0.4,
    dump_rate: float = 0.05,
    dump_drop: float = 0.2,
    start: date = START,
) -> SeasonalFixture:
    """Seasonal sinusoid panel with produce-market texture.

    Nearby markets share phase but cycle lengths differ per market, noise sd is
    a fraction of the seasonal swing, occasional volume spikes (harvest dumps)
    knock the next day's price down, and a uniform share of cells is masked out.
    """
    rng = np.random.default_rng(seed)
    registry = make_registry(n_markets)
    t = np.arange(days)

    base = rng.uniform(800.0, 1200.0, size=n_markets)
    phase = np.array([(m.latitude - 20.0) + (m.longitude - 84.0) for m in registry])
    period_m = np.array(periods)[np.arange(n_markets) % len(periods)]
    sin_arg = 2 * np.pi * t[None, :] / period_m[:, None] + phase[:, None]
    price = base[:, None] * (1.0 + amplitude * np.sin(sin_arg))
    price = price + rng.normal(0.0, noise * amplitude * base[:, None], size=price.shape)

    vol_base = rng.uniform(2.0, 8.0, size=n_markets)
    volume = vol_base[:, None] * (1.0 + 0.5 * np.sin(sin_arg + np.pi / 3))
    volume = np.maximum(volume + rng.normal(0.0, 0.1 * vol_base[:, None], size=volume.shape), 0.0)

    if dump_rate > 0:
        dump = rng.random(size=volume.shape) < dump_rate
        volume = volume * np.where(dump, 2.5, 1.0)
        price[:, 1:] = np.where(dump[:, :-1], price[:, 1:] * (1.0 - dump_drop), price[:, 1:])
    price = np.maximum(price, 1.0)

    mask = rng.random(size=price.shape) < missing
    sparse_price = price.copy()
    sparse_price[mask] = np.nan
    sparse_volume = volume.copy()
    sparse_volume[mask] = np.nan

    market_ids = [m.market_id for m in registry]
    bundle = PanelBundle(
        price=SparsePanel("tomato", market_ids, start, days, sparse_price, "price"),
        volume=SparsePanel("tomato", market_ids, start, days, sparse_volume, "volume"),
        registry=registry,
    )
    return SeasonalFixture(bundle=bundle, true_price=price, true_volume=volume, registry=registry)


@pytest.fixture(scope="session")
def seasonal():
    return make_seasonal_bundle()


@pytest.fixture
def tiny_registry():
    return [
        MarketRecord("BANKI", "Banki", 20.38, 85.53, "Odisha"),
        MarketRecord("CUTTACK", "Cuttack", 20.46, 85.88, "Odisha"),
        MarketRecord("KENDUPATNA", "Kendupatna", 20.42, 85.70, "Odisha"),
    ]
