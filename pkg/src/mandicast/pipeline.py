"""Daily batch orchestration: acquire, clean, predict, archive, check, report.

A failed stage marks every later stage skipped, but the run report is always
persisted and emitted. The published-forecast pointer flips only in the check
stage, after the archive stage has committed the whole batch, so readers never
observe a partially written day.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from .evaluate import CvConfig, sweep, PanelBundle
from .features import FeatureConfig, DateRange, build_samples, build_test_vector, quantize
from .impute import ImputeConfig, soft_impute
from .ingest import (
    MarketRecord,
    OutlierPolicy,
    SparsePanel,
    build_panels,
    clean_outliers,
    parse_observations,
)
from .kernel import (
    calibrate_l,
    classify,
    evidence_to_dicts,
    interval_top_l,
    kernel_weights,
    posterior,
    regress_rfnn,
)
from .models import (
    CLASS_INDEX,
    ForestParams,
    forest_from_dict,
    forest_to_dict,
    fit_forest,
)
from .store import Store

logger = logging.getLogger(__name__)

STAGES = ("acquire", "clean", "predict", "archive", "check", "report")

DIRECTION_WIRE = {-1: "down", 0: "flat", 1: "up"}


@dataclass
class StageResult:
    status: str = "skipped"  # ok | failed | skipped
    duration_s: float = 0.0
    error: str | None = None


@dataclass
class RunReport:
    run_date: date
    stages: dict[str, StageResult] = field(
        default_factory=lambda: {name: StageResult() for name in STAGES}
    )
    rows_acquired: int = 0
    outliers_removed: int = 0
    forecasts_written: int = 0
    attempt: int = 0

    @property
    def ok(self) -> bool:
        return all(s.status == "ok" for s in self.stages.values())

    def to_dict(self) -> dict:
        return {
            "run_date": self.run_date.isoformat(),
            "attempt": self.attempt,
            "stages": {
                name: {
                    "status": s.status,
                    "duration_s": s.duration_s,
                    "error": s.error,
                }
                for name, s in self.stages.items()
            },
            "rows_acquired": self.rows_acquired,
            "outliers_removed": self.outliers_removed,
            "forecasts_written": self.forecasts_written,
        }


class ObservationSource:
    """Pulls one day's observation CSV; raise on unavailability."""

    def fetch(self, day: date) -> bytes:
        raise NotImplementedError


class CsvDirSource(ObservationSource):
    """Reads {date}.csv files from a directory; the fixed-contract file fetcher."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def fetch(self, day: date) -> bytes:
        path = self.directory / f"{day.isoformat()}.csv"
        if not path.exists():
            raise FileNotFoundError(f"no observation file {path}")
        return path.read_bytes()


class ReportSink:
    def emit(self, report: RunReport):
        raise NotImplementedError


class LogReportSink(ReportSink):
    def emit(self, report: RunReport):
        logger.info("run report %s", json.dumps(report.to_dict(), sort_keys=True))


class FileReportSink(ReportSink):
    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def emit(self, report: RunReport):
        path = self.directory / f"run-{report.run_date.isoformat()}-{report.attempt}.json"
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))


@dataclass
class PipelineConfig:
    horizons: tuple[int, ...] = (1, 7, 14, 28)
    tau: int = 10
    k: int = 5
    num_trees: int = 25
    max_depth: int | None = 12
    max_rank: int = 10
    alpha: float = 0.8
    evidence_top_n: int = 5
    outlier_policy: OutlierPolicy = field(default_factory=OutlierPolicy)
    impute_rel_tol: float = 1e-4
    impute_max_iters: int = 100
    seed: int = 0
    retrain_every_days: int = 28
    schedule_time: str = "20:00"
    timezone: str = "Asia/Kolkata"


def _build_clean_panels(
    store: Store, produce: str, as_of: date, config: PipelineConfig
) -> tuple[SparsePanel, SparsePanel, int] | None:
    span = store.observation_date_range(produce)
    if span is None:
        return None
    start = span[0]
    num_days = (as_of - start).days + 1
    if num_days < 1:
        return None
    rows = store.observations(produce=produce, through=as_of)
    registry = store.markets()
    price, volume, _ = build_panels(rows, produce, start, num_days, registry)
    price, clean_report = clean_outliers(price, config.outlier_policy)
    return price, volume, clean_report.n_removed


def _impute_quantize(price: SparsePanel, volume: SparsePanel, q: int, config: PipelineConfig):
    m = len(price.markets)
    rank = min(config.max_rank, m, price.num_days)
    icfg = ImputeConfig(
        max_rank=rank,
        rel_tol=config.impute_rel_tol,
        max_iters=config.impute_max_iters,
        rng_seed=config.seed,
    )
    price_dense, _ = soft_impute(price, icfg)
    volume_dense, _ = soft_impute(volume, icfg)
    return price_dense, quantize(price_dense, q), quantize(volume_dense, q)


def _fit_model_payload(
    price_qp, volume_qp, produce: str, market_id: str, q: int,
    registry: list[MarketRecord], config: PipelineConfig,
    forest_params: ForestParams | None = None, k: int | None = None,
) -> dict | None:
    """Fit a forest on pre-calibration steps, calibrate l on the held-out tail."""
    fconfig = FeatureConfig(tau=config.tau, k=k or config.k)
    s_total = price_qp.num_steps
    usable = s_total - config.tau
    if usable < 1:
        return None
    n_cal = max(1, int(math.floor(0.2 * usable)))
    fit_cutoff = s_total - n_cal  # train on steps <= fit_cutoff
    samples = build_samples(price_qp, volume_qp, market_id, fconfig, registry)
    fit_samples = [s for s in samples if s.step <= fit_cutoff]
    if len(fit_samples) < 2 or fit_cutoff - config.tau < 1:
        return None
    params = forest_params or ForestParams(
        num_trees=config.num_trees, max_depth=config.max_depth, rng_seed=config.seed
    )
    model = fit_forest(fit_samples, params)
    calibration = calibrate_l(model, price_qp, volume_qp, config.alpha,
                              calibration_fraction=n_cal / usable)
    return {
        "forest": forest_to_dict(model),
        "produce": produce,
        "market_id": market_id,
        "q": q,
        "k": fconfig.k,
        "tau": config.tau,
        "interval": {
            "method": "top_l",
            "l": calibration.l,
            "coverage": calibration.coverage,
            "alpha": calibration.alpha,
            "flagged": calibration.flagged,
        },
        "step_dates": [
            [r.start.isoformat(), r.end.isoformat()] for r in price_qp.step_dates
        ],
    }


def _forecast_payload(
    model_payload: dict, version: int, price_qp, volume_qp, market_id: str,
    produce: str, q: int, as_of: date, config: PipelineConfig,
) -> dict | None:
    tau = model_payload["tau"]
    s_next = price_qp.num_steps + 1
    if s_next < tau + 1:
        return None
    model = forest_from_dict(model_payload["forest"])
    fconfig = FeatureConfig(tau=tau, k=model_payload["k"])
    x = build_test_vector(price_qp, volume_qp, market_id, fconfig, s_next)
    train_step_dates = [
        DateRange(date.fromisoformat(a), date.fromisoformat(b))
        for a, b in model_payload["step_dates"]
    ]
    neighbors = kernel_weights(model, x, step_dates=train_step_dates)
    eta = posterior(neighbors, model.labels)
    direction = classify(eta)
    predicted_price = regress_rfnn(neighbors, model.prices)
    interval = interval_top_l(neighbors, model_payload["interval"]["l"])
    return {
        "generated_at": as_of.isoformat(),
        "market_id": market_id,
        "produce": produce,
        "q": q,
        "direction": DIRECTION_WIRE[direction],
        "posterior": {
            "down": float(eta[CLASS_INDEX[-1]]),
            "flat": float(eta[CLASS_INDEX[0]]),
            "up": float(eta[CLASS_INDEX[1]]),
        },
        "predicted_price_rs_per_quintal": predicted_price,
        "interval": interval.to_dict(),
        "evidence": evidence_to_dicts(neighbors, top_n=config.evidence_top_n),
        "model_version": version,
    }


def run_daily(
    as_of: date,
    store: Store,
    sources: list[ObservationSource],
    config: PipelineConfig | None = None,
    sink: ReportSink | None = None,
) -> RunReport:
    """Execute the six daily stages in order; see module docstring for semantics."""
    if not sources:
        raise ValueError("at least one observation source is required")
    config = config or PipelineConfig()
    sink = sink or LogReportSink()
    report = RunReport(run_date=as_of)
    lease = store.acquire_lease("writer")
    failed = False
    batch_id: int | None = None
    staged: list[tuple[str, str, int, dict]] = []
    imputed_rows: list[tuple[str, str, str, float]] = []

    def run_stage(name: str, fn) -> bool:
        nonlocal failed
        if failed:
            return False
        t0 = time.monotonic()
        try:
            fn()
            report.stages[name] = StageResult("ok", time.monotonic() - t0)
            logger.info(json.dumps({"stage": name, "status": "ok"}))
            return True
        except Exception as exc:  # stage failures are reported, not raised
            report.stages[name] = StageResult("failed", time.monotonic() - t0, str(exc))
            logger.error(json.dumps({"stage": name, "status": "failed", "error": str(exc)}))
            failed = True
            return False

    def acquire():
        rows_total = 0
        for source in sources:
            raw = source.fetch(as_of)
            rows = parse_observations(raw)
            rows_total += store.upsert_observations(rows)
        report.rows_acquired = rows_total

    def clean():
        removed = 0
        for produce in store.produce_list():
            built = _build_clean_panels(store, produce, as_of, config)
            if built is not None:
                removed += built[2]
        report.outliers_removed = removed

    def predict():
        registry = store.markets()
        if not registry:
            raise RuntimeError("market registry is empty")
        for produce in store.produce_list():
            built = _build_clean_panels(store, produce, as_of, config)
            if built is None:
                continue
            price, volume, _ = built
            for q in config.horizons:
                if price.num_days < q:
                    continue
                price_dense, price_qp, volume_qp = _impute_quantize(price, volume, q, config)
                if price_qp.num_steps < config.tau + 1:
                    continue
                if q == config.horizons[0]:
                    for m, market_id in enumerate(price_dense.markets):
                        for t, day in enumerate(price_dense.dates()):
                            imputed_rows.append(
                                (produce, market_id, day.isoformat(),
                                 float(price_dense.values[m, t]))
                            )
                for market_id in price_qp.markets:
                    current = store.current_model(produce, market_id, q)
                    if current is None:
                        payload = _fit_model_payload(
                            price_qp, volume_qp, produce, market_id, q, registry, config
                        )
                        if payload is None:
                            continue
                        version = store.save_model(
                            produce, market_id, q, payload, as_of.isoformat()
                        )
                        current = (version, payload)
                    version, model_payload = current
                    forecast = _forecast_payload(
                        model_payload, version, price_qp, volume_qp, market_id,
                        produce, q, as_of, config,
                    )
                    if forecast is not None:
                        staged.append((market_id, produce, q, forecast))
        report.forecasts_written = len(staged)
        if not staged:
            raise RuntimeError("no forecasts could be produced (insufficient history)")

    def archive():
        nonlocal batch_id
        batch_id = store.create_batch(as_of)
        store.write_forecasts(batch_id, staged)
        store.write_imputed(batch_id, imputed_rows)

    def check():
        stage_ok = all(
            report.stages[name].status == "ok" for name in ("acquire", "clean", "predict", "archive")
        )
        if not stage_ok or batch_id is None:
            raise RuntimeError("previous stages incomplete; not publishing")
        store.publish_batch(batch_id)

    try:
        run_stage("acquire", acquire)
        run_stage("clean", clean)
        run_stage("predict", predict)
        run_stage("archive", archive)
        run_stage("check", check)
        run_stage("report", lambda: None)
    finally:
        # the report is persisted and emitted even when a stage failed
        report.attempt = store.append_run(as_of, report.to_dict())
        try:
            sink.emit(report)
        except Exception:
            logger.exception("report sink failed")
        store.release_lease(lease)
    return report


def run_due_retrains(
    store: Store,
    as_of: date,
    config: PipelineConfig | None = None,
) -> dict[tuple[str, str], dict[int, int]]:
    """Refresh every served model older than retrain_every_days.

    The periodic retraining policy for external schedulers: scan the serving
    pointers, and for each (produce, market) whose oldest current model was
    created at least retrain_every_days before as_of, run a full retrain.
    Returns the new versions per refreshed key.
    """
    config = config or PipelineConfig()
    due: set[tuple[str, str]] = set()
    for produce, market_id, _, _, created_at in store.current_models():
        age_days = (as_of - date.fromisoformat(created_at)).days
        if age_days >= config.retrain_every_days:
            due.add((produce, market_id))
    refreshed: dict[tuple[str, str], dict[int, int]] = {}
    for produce, market_id in sorted(due):
        versions = retrain(produce, market_id, store, config, as_of=as_of)
        if versions:
            refreshed[(produce, market_id)] = versions
    return refreshed


def retrain(
    produce: str,
    market_id: str,
    store: Store,
    config: PipelineConfig | None = None,
    as_of: date | None = None,
    grid: dict[str, list] | None = None,
) -> dict[int, int]:
    """Refit the (produce, market) models for every horizon; returns q -> new version.

    Runs the evaluation sweep on archived observations to pick hyperparameters,
    then fits a fresh forest with a calibrated top-l interval per horizon and
    swaps each serving pointer atomically. Horizons without enough history are
    flagged (absent from the result) and leave the pointer untouched.
    """
    config = config or PipelineConfig()
    span = store.observation_date_range(produce)
    if span is None:
        raise ValueError(f"no observations for produce {produce!r}")
    as_of = as_of or span[1]
    built = _build_clean_panels(store, produce, as_of, config)
    if built is None:
        raise ValueError(f"no observation history for {produce!r} through {as_of}")
    price, volume, _ = built
    registry = store.markets()

    lease = store.acquire_lease("writer")
    try:
        versions: dict[int, int] = {}
        for q in config.horizons:
            if price.num_days < q:
                logger.warning("horizon q=%d skipped: only %d days of history", q, price.num_days)
                continue
            _, price_qp, volume_qp = _impute_quantize(price, volume, q, config)
            if price_qp.num_steps < config.tau + 1:
                logger.warning("horizon q=%d skipped: S=%d <= tau", q, price_qp.num_steps)
                continue
            params = ForestParams(
                num_trees=config.num_trees, max_depth=config.max_depth, rng_seed=config.seed
            )
            k = config.k
            if grid:
                bundle = PanelBundle(price=price, volume=volume, registry=registry)
                usable_days = price.num_days
                t2 = as_of
                t1 = price.start_date + (as_of - price.start_date) * 3 // 4
                cv = CvConfig(
                    t1=t1, t2=t2, grid=grid, q=q, tau=config.tau,
                    target_markets=[market_id], seed=config.seed,
                )
                best = sweep(bundle, cv).best
                params = ForestParams(
                    num_trees=best.num_trees, max_depth=config.max_depth, rng_seed=config.seed
                )
                k = best.k
            payload = _fit_model_payload(
                price_qp, volume_qp, produce, market_id, q, registry, config,
                forest_params=params, k=k,
            )
            if payload is None:
                logger.warning("horizon q=%d flagged: not enough samples to fit", q)
                continue
            versions[q] = store.save_model(produce, market_id, q, payload, as_of.isoformat())
        return versions
    finally:
        store.release_lease(lease)
