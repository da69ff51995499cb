"""Market registry, observation CSV parsing, sparse panel assembly, outlier removal.

Prices are Rs per quintal (100 kg) throughout; volumes are metric tons.
Missing panel entries are NaN.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

logger = logging.getLogger(__name__)

OBSERVATION_HEADER = ["date", "market_id", "produce", "modal_price_rs_per_quintal", "volume_tonnes"]
MARKET_HEADER = ["market_id", "name", "latitude", "longitude", "state"]


class IngestError(ValueError):
    """Raised for malformed ingestion input; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class MarketRecord:
    market_id: str
    name: str
    latitude: float | None
    longitude: float | None
    state: str

    def __post_init__(self):
        if self.latitude is not None and not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} out of range for {self.market_id}")
        if self.longitude is not None and not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} out of range for {self.market_id}")

    @property
    def has_coordinates(self) -> bool:
        return self.latitude is not None and self.longitude is not None


@dataclass(frozen=True)
class ObservationRow:
    date: date
    market_id: str
    produce: str
    modal_price: float | None  # Rs per quintal
    volume: float | None  # metric tons


@dataclass
class SparsePanel:
    """M-by-T grid of prices or volumes over contiguous calendar days; NaN = missing."""

    produce: str
    markets: list[str]
    start_date: date
    num_days: int
    values: np.ndarray
    kind: str = "price"  # "price" or "volume"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.markets), self.num_days):
            raise ValueError(
                f"panel shape {self.values.shape} != ({len(self.markets)}, {self.num_days})"
            )
        if len(self.markets) < 1 or self.num_days < 1:
            raise ValueError("panel needs at least one market and one day")
        if self.kind not in ("price", "volume"):
            raise ValueError(f"unknown panel kind {self.kind!r}")
        present = self.values[~np.isnan(self.values)]
        if self.kind == "price" and np.any(present <= 0):
            raise ValueError("present price entries must be > 0")
        if self.kind == "volume" and np.any(present < 0):
            raise ValueError("present volume entries must be >= 0")

    def dates(self) -> list[date]:
        return [self.start_date + timedelta(days=t) for t in range(self.num_days)]

    @property
    def observed_mask(self) -> np.ndarray:
        return ~np.isnan(self.values)


@dataclass
class IngestReport:
    rows_total: int = 0
    rows_placed: int = 0
    skipped_unknown_market: int = 0
    skipped_out_of_range: int = 0

    def to_dict(self) -> dict:
        return {
            "rows_total": self.rows_total,
            "rows_placed": self.rows_placed,
            "skipped_unknown_market": self.skipped_unknown_market,
            "skipped_out_of_range": self.skipped_out_of_range,
        }


@dataclass
class OutlierPolicy:
    """Multiplicative outlier rule against the trailing-window median."""

    ratio: float = 10.0
    window_days: int = 30
    min_support: int = 3


@dataclass
class CleanReport:
    removed: list[tuple[str, date, float]] = field(default_factory=list)

    @property
    def n_removed(self) -> int:
        return len(self.removed)


def _parse_optional_float(cell: str, name: str, line: int) -> float | None:
    cell = cell.strip()
    if cell == "":
        return None
    try:
        value = float(cell)
    except ValueError:
        raise IngestError(f"unparseable {name} {cell!r}", line) from None
    return value


def parse_observations(csv_bytes: bytes) -> list[ObservationRow]:
    """Parse the ingestion CSV into rows, preserving file order.

    Header must be exactly `date,market_id,produce,modal_price_rs_per_quintal,volume_tonnes`.
    Empty price/volume cells become None. Raises IngestError with the line number
    for a bad header, unparseable dates, nonpositive prices, or negative volumes.
    """
    text = csv_bytes.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty file: missing header", 1) from None
    if [h.strip() for h in header] != OBSERVATION_HEADER:
        raise IngestError(f"malformed header {header!r}", 1)

    rows: list[ObservationRow] = []
    for line_no, cells in enumerate(reader, start=2):
        if not cells or all(c.strip() == "" for c in cells):
            continue
        if len(cells) != 5:
            raise IngestError(f"expected 5 fields, got {len(cells)}", line_no)
        try:
            day = date.fromisoformat(cells[0].strip())
        except ValueError:
            raise IngestError(f"unparseable date {cells[0]!r}", line_no) from None
        price = _parse_optional_float(cells[3], "price", line_no)
        volume = _parse_optional_float(cells[4], "volume", line_no)
        if price is not None and price <= 0:
            raise IngestError(f"price must be > 0, got {price}", line_no)
        if volume is not None and volume < 0:
            raise IngestError(f"volume must be >= 0, got {volume}", line_no)
        rows.append(
            ObservationRow(
                date=day,
                market_id=cells[1].strip(),
                produce=cells[2].strip(),
                modal_price=price,
                volume=volume,
            )
        )
    return rows


def parse_markets(csv_bytes: bytes) -> list[MarketRecord]:
    """Parse the market registry CSV; market_id must be unique."""
    text = csv_bytes.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty file: missing header", 1) from None
    if [h.strip() for h in header] != MARKET_HEADER:
        raise IngestError(f"malformed header {header!r}", 1)

    records: list[MarketRecord] = []
    seen: set[str] = set()
    for line_no, cells in enumerate(reader, start=2):
        if not cells or all(c.strip() == "" for c in cells):
            continue
        if len(cells) != 5:
            raise IngestError(f"expected 5 fields, got {len(cells)}", line_no)
        market_id = cells[0].strip()
        if market_id in seen:
            raise IngestError(f"duplicate market_id {market_id!r}", line_no)
        seen.add(market_id)
        lat = _parse_optional_float(cells[2], "latitude", line_no)
        lon = _parse_optional_float(cells[3], "longitude", line_no)
        try:
            records.append(
                MarketRecord(
                    market_id=market_id,
                    name=cells[1].strip(),
                    latitude=lat,
                    longitude=lon,
                    state=cells[4].strip(),
                )
            )
        except ValueError as exc:
            raise IngestError(str(exc), line_no) from None
    return records


def build_panels(
    rows: list[ObservationRow],
    produce: str,
    start_date: date,
    num_days: int,
    markets: list[MarketRecord],
) -> tuple[SparsePanel, SparsePanel, IngestReport]:
    """Assemble sparse price and volume panels from observation rows.

    Duplicate (market, date, produce) rows resolve last-wins. Rows for unknown
    markets or outside the date window are skipped and counted in the report.
    """
    if num_days < 1:
        raise ValueError("num_days must be >= 1")
    if not markets:
        raise ValueError("market registry is empty")

    market_ids = [m.market_id for m in markets]
    index = {mid: i for i, mid in enumerate(market_ids)}
    prices = np.full((len(markets), num_days), np.nan)
    volumes = np.full((len(markets), num_days), np.nan)
    report = IngestReport()

    for row in rows:
        if row.produce != produce:
            continue
        report.rows_total += 1
        if row.market_id not in index:
            report.skipped_unknown_market += 1
            continue
        t = (row.date - start_date).days
        if not 0 <= t < num_days:
            report.skipped_out_of_range += 1
            continue
        m = index[row.market_id]
        # last-wins: the latest row for the cell overwrites, absent included
        prices[m, t] = row.modal_price if row.modal_price is not None else np.nan
        volumes[m, t] = row.volume if row.volume is not None else np.nan
        report.rows_placed += 1

    price_panel = SparsePanel(produce, market_ids, start_date, num_days, prices, kind="price")
    volume_panel = SparsePanel(produce, market_ids, start_date, num_days, volumes, kind="volume")
    return price_panel, volume_panel, report


def clean_outliers(
    panel: SparsePanel, policy: OutlierPolicy | None = None
) -> tuple[SparsePanel, CleanReport]:
    """Remove price entries that deviate multiplicatively from the trailing median.

    Each present price is compared against the median of present prices in that
    market's trailing `window_days` (the value itself excluded). Entries outside
    [median/ratio, median*ratio] are set absent. Entries with fewer than
    `min_support` comparison points are kept. All comparisons use the input
    panel, so removal is a single batch pass.
    """
    if policy is None:
        policy = OutlierPolicy()
    values = panel.values.copy()
    report = CleanReport()

    for m in range(len(panel.markets)):
        row = panel.values[m]
        for t in np.flatnonzero(~np.isnan(row)):
            lo = max(0, t - policy.window_days)
            window = row[lo:t]
            support = window[~np.isnan(window)]
            if support.size < policy.min_support:
                continue
            med = float(np.median(support))
            ratio = row[t] / med if med > 0 else np.inf
            if ratio > policy.ratio or ratio < 1.0 / policy.ratio:
                values[m, t] = np.nan
                report.removed.append(
                    (panel.markets[m], panel.start_date + timedelta(days=int(t)), float(row[t]))
                )

    cleaned = SparsePanel(
        panel.produce, list(panel.markets), panel.start_date, panel.num_days, values, panel.kind
    )
    return cleaned, report
