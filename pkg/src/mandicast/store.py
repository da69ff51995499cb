"""Embedded single-file store: observations, models, forecast batches, run reports.

Forecasts are written under a batch id and become visible only when the
`published_batch` pointer flips to that id; readers resolve the pointer and the
rows inside one read transaction, so a burst of readers during a pipeline run
sees either the old snapshot or the new one, never a mix. A writer lease keeps
the pipeline and retraining from interleaving writes.
"""

from __future__ import annotations

import json
import os
import sqlite3
import time
import uuid
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import date

from .ingest import MarketRecord, ObservationRow

_SCHEMA = """
CREATE TABLE IF NOT EXISTS markets(
    market_id TEXT PRIMARY KEY, name TEXT, latitude REAL, longitude REAL, state TEXT);
CREATE TABLE IF NOT EXISTS observations(
    date TEXT, market_id TEXT, produce TEXT, price REAL, volume REAL,
    PRIMARY KEY(date, market_id, produce));
CREATE TABLE IF NOT EXISTS models(
    produce TEXT, market_id TEXT, q INTEGER, version INTEGER,
    payload TEXT, created_at TEXT,
    PRIMARY KEY(produce, market_id, q, version));
CREATE TABLE IF NOT EXISTS model_pointer(
    produce TEXT, market_id TEXT, q INTEGER, version INTEGER,
    PRIMARY KEY(produce, market_id, q));
CREATE TABLE IF NOT EXISTS forecast_batches(
    batch_id INTEGER PRIMARY KEY AUTOINCREMENT, as_of_date TEXT, created_at REAL);
CREATE TABLE IF NOT EXISTS forecasts(
    batch_id INTEGER, market_id TEXT, produce TEXT, q INTEGER, payload TEXT,
    PRIMARY KEY(batch_id, market_id, produce, q));
CREATE TABLE IF NOT EXISTS imputed(
    batch_id INTEGER, produce TEXT, market_id TEXT, date TEXT, price REAL,
    PRIMARY KEY(batch_id, produce, market_id, date));
CREATE TABLE IF NOT EXISTS runs(
    run_date TEXT, attempt INTEGER, report TEXT, PRIMARY KEY(run_date, attempt));
CREATE TABLE IF NOT EXISTS meta(key TEXT PRIMARY KEY, value TEXT);
CREATE TABLE IF NOT EXISTS lease(name TEXT PRIMARY KEY, holder TEXT, expires_at REAL);
"""


class WriterBusy(RuntimeError):
    """Another writer currently holds the store lease."""


@dataclass
class PublishedForecast:
    batch_id: int
    market_id: str
    produce: str
    q: int
    payload: dict


class Store:
    """SQLite-backed store; every operation opens its own connection, so reads
    are independent snapshots and instances are safe to share across threads."""

    def __init__(self, path: str | os.PathLike):
        self.path = str(path)
        with self._connect() as conn:
            conn.executescript(_SCHEMA)

    def _connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.path, timeout=30.0)
        conn.execute("PRAGMA journal_mode=WAL")
        conn.execute("PRAGMA foreign_keys=ON")
        return conn

    @contextmanager
    def _tx(self, immediate: bool = False):
        conn = self._connect()
        try:
            conn.execute("BEGIN IMMEDIATE" if immediate else "BEGIN")
            yield conn
            conn.commit()
        except Exception:
            conn.rollback()
            raise
        finally:
            conn.close()

    # -- writer lease ------------------------------------------------------

    def acquire_lease(self, name: str = "writer", ttl_s: float = 600.0) -> str:
        holder = uuid.uuid4().hex
        now = time.time()
        with self._tx(immediate=True) as conn:
            row = conn.execute(
                "SELECT holder, expires_at FROM lease WHERE name=?", (name,)
            ).fetchone()
            if row is not None and row[1] > now:
                raise WriterBusy(f"lease {name!r} held until {row[1]:.0f}")
            conn.execute(
                "INSERT OR REPLACE INTO lease(name, holder, expires_at) VALUES(?,?,?)",
                (name, holder, now + ttl_s),
            )
        return holder

    def release_lease(self, holder: str, name: str = "writer"):
        with self._tx(immediate=True) as conn:
            conn.execute("DELETE FROM lease WHERE name=? AND holder=?", (name, holder))

    # -- registry and observations ------------------------------------------

    def upsert_markets(self, records: list[MarketRecord]):
        with self._tx(immediate=True) as conn:
            conn.executemany(
                "INSERT OR REPLACE INTO markets VALUES(?,?,?,?,?)",
                [(m.market_id, m.name, m.latitude, m.longitude, m.state) for m in records],
            )

    def markets(self) -> list[MarketRecord]:
        with self._tx() as conn:
            rows = conn.execute(
                "SELECT market_id, name, latitude, longitude, state FROM markets "
                "ORDER BY market_id"
            ).fetchall()
        return [MarketRecord(*row) for row in rows]

    def upsert_observations(self, rows: list[ObservationRow]) -> int:
        with self._tx(immediate=True) as conn:
            conn.executemany(
                "INSERT OR REPLACE INTO observations VALUES(?,?,?,?,?)",
                [
                    (r.date.isoformat(), r.market_id, r.produce, r.modal_price, r.volume)
                    for r in rows
                ],
            )
        return len(rows)

    def observations(self, produce: str | None = None, through: date | None = None) -> list[ObservationRow]:
        query = "SELECT date, market_id, produce, price, volume FROM observations"
        clauses, args = [], []
        if produce is not None:
            clauses.append("produce=?")
            args.append(produce)
        if through is not None:
            clauses.append("date<=?")
            args.append(through.isoformat())
        if clauses:
            query += " WHERE " + " AND ".join(clauses)
        query += " ORDER BY date, market_id"
        with self._tx() as conn:
            rows = conn.execute(query, args).fetchall()
        return [
            ObservationRow(date.fromisoformat(r[0]), r[1], r[2], r[3], r[4]) for r in rows
        ]

    def produce_list(self) -> list[str]:
        with self._tx() as conn:
            rows = conn.execute("SELECT DISTINCT produce FROM observations ORDER BY produce").fetchall()
        return [r[0] for r in rows]

    def observation_date_range(self, produce: str) -> tuple[date, date] | None:
        with self._tx() as conn:
            row = conn.execute(
                "SELECT MIN(date), MAX(date) FROM observations WHERE produce=?", (produce,)
            ).fetchone()
        if row is None or row[0] is None:
            return None
        return date.fromisoformat(row[0]), date.fromisoformat(row[1])

    # -- models --------------------------------------------------------------

    def next_model_version(self, produce: str, market_id: str, q: int) -> int:
        with self._tx() as conn:
            row = conn.execute(
                "SELECT MAX(version) FROM models WHERE produce=? AND market_id=? AND q=?",
                (produce, market_id, q),
            ).fetchone()
        return (row[0] or 0) + 1

    def save_model(self, produce: str, market_id: str, q: int, payload: dict,
                   created_at: str) -> int:
        """Store a new model version and atomically swap the serving pointer."""
        with self._tx(immediate=True) as conn:
            row = conn.execute(
                "SELECT MAX(version) FROM models WHERE produce=? AND market_id=? AND q=?",
                (produce, market_id, q),
            ).fetchone()
            version = (row[0] or 0) + 1
            conn.execute(
                "INSERT INTO models VALUES(?,?,?,?,?,?)",
                (produce, market_id, q, version, json.dumps(payload), created_at),
            )
            conn.execute(
                "INSERT OR REPLACE INTO model_pointer VALUES(?,?,?,?)",
                (produce, market_id, q, version),
            )
        return version

    def current_models(self) -> list[tuple[str, str, int, int, str]]:
        """Serving pointers: (produce, market_id, q, version, created_at)."""
        with self._tx() as conn:
            rows = conn.execute(
                "SELECT m.produce, m.market_id, m.q, m.version, m.created_at "
                "FROM model_pointer p "
                "JOIN models m ON m.produce=p.produce AND m.market_id=p.market_id "
                "AND m.q=p.q AND m.version=p.version "
                "ORDER BY m.produce, m.market_id, m.q"
            ).fetchall()
        return [(r[0], r[1], int(r[2]), int(r[3]), r[4]) for r in rows]

    def current_model(self, produce: str, market_id: str, q: int) -> tuple[int, dict] | None:
        with self._tx() as conn:
            row = conn.execute(
                "SELECT m.version, m.payload FROM model_pointer p "
                "JOIN models m ON m.produce=p.produce AND m.market_id=p.market_id "
                "AND m.q=p.q AND m.version=p.version "
                "WHERE p.produce=? AND p.market_id=? AND p.q=?",
                (produce, market_id, q),
            ).fetchone()
        if row is None:
            return None
        return int(row[0]), json.loads(row[1])

    # -- forecast batches and publish pointer ---------------------------------

    def create_batch(self, as_of: date) -> int:
        with self._tx(immediate=True) as conn:
            cur = conn.execute(
                "INSERT INTO forecast_batches(as_of_date, created_at) VALUES(?,?)",
                (as_of.isoformat(), time.time()),
            )
            return int(cur.lastrowid)

    def write_forecasts(self, batch_id: int, records: list[tuple[str, str, int, dict]]):
        """records: (market_id, produce, q, payload). Staged, not yet visible."""
        with self._tx(immediate=True) as conn:
            conn.executemany(
                "INSERT OR REPLACE INTO forecasts VALUES(?,?,?,?,?)",
                [
                    (batch_id, market_id, produce, q, json.dumps(payload, sort_keys=True))
                    for market_id, produce, q, payload in records
                ],
            )

    def write_imputed(self, batch_id: int, rows: list[tuple[str, str, str, float]]):
        """rows: (produce, market_id, iso date, imputed price)."""
        with self._tx(immediate=True) as conn:
            conn.executemany(
                "INSERT OR REPLACE INTO imputed VALUES(?,?,?,?,?)",
                [(batch_id, produce, market, day, price) for produce, market, day, price in rows],
            )

    def publish_batch(self, batch_id: int):
        with self._tx(immediate=True) as conn:
            conn.execute(
                "INSERT OR REPLACE INTO meta(key, value) VALUES('published_batch', ?)",
                (str(batch_id),),
            )

    def published_batch_id(self) -> int | None:
        with self._tx() as conn:
            row = conn.execute("SELECT value FROM meta WHERE key='published_batch'").fetchone()
        return int(row[0]) if row else None

    def published_forecasts(
        self, market_id: str | None = None, produce: str | None = None
    ) -> list[PublishedForecast]:
        """Pointer resolution and row reads share one transaction: a snapshot."""
        with self._tx() as conn:
            row = conn.execute("SELECT value FROM meta WHERE key='published_batch'").fetchone()
            if row is None:
                return []
            batch_id = int(row[0])
            query = "SELECT market_id, produce, q, payload FROM forecasts WHERE batch_id=?"
            args: list = [batch_id]
            if market_id is not None:
                query += " AND market_id=?"
                args.append(market_id)
            if produce is not None:
                query += " AND produce=?"
                args.append(produce)
            query += " ORDER BY market_id, produce, q"
            rows = conn.execute(query, args).fetchall()
        return [
            PublishedForecast(batch_id, r[0], r[1], int(r[2]), json.loads(r[3])) for r in rows
        ]

    def published_imputed(
        self, produce: str, market_id: str, last_days: int | None = None
    ) -> list[tuple[str, float]]:
        with self._tx() as conn:
            row = conn.execute("SELECT value FROM meta WHERE key='published_batch'").fetchone()
            if row is None:
                return []
            batch_id = int(row[0])
            rows = conn.execute(
                "SELECT date, price FROM imputed WHERE batch_id=? AND produce=? AND market_id=? "
                "ORDER BY date",
                (batch_id, produce, market_id),
            ).fetchall()
        if last_days is not None:
            rows = rows[-last_days:]
        return [(r[0], r[1]) for r in rows]

    # -- runs -----------------------------------------------------------------

    def append_run(self, run_date: date, report: dict) -> int:
        with self._tx(immediate=True) as conn:
            row = conn.execute(
                "SELECT MAX(attempt) FROM runs WHERE run_date=?", (run_date.isoformat(),)
            ).fetchone()
            attempt = (row[0] or 0) + 1
            conn.execute(
                "INSERT INTO runs VALUES(?,?,?)",
                (run_date.isoformat(), attempt, json.dumps(report, sort_keys=True)),
            )
        return attempt

    def runs(self) -> list[tuple[str, int, dict]]:
        with self._tx() as conn:
            rows = conn.execute(
                "SELECT run_date, attempt, report FROM runs ORDER BY run_date, attempt"
            ).fetchall()
        return [(r[0], int(r[1]), json.loads(r[2])) for r in rows]

    def last_run(self) -> tuple[str, int, dict] | None:
        all_runs = self.runs()
        return all_runs[-1] if all_runs else None
