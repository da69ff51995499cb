"""Operator command line: ingest, impute, train, forecast, evaluate, daily-run, serve.

Machine-readable output goes to stdout; logs go to stderr as JSON lines. Exit
codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

from .evaluate import CvConfig, PanelBundle, sweep
from .impute import ImputeConfig, soft_impute
from .ingest import IngestError, build_panels, clean_outliers, parse_markets, parse_observations
from .pipeline import (
    CsvDirSource,
    FileReportSink,
    PipelineConfig,
    retrain,
    run_daily,
    run_due_retrains,
)
from .store import Store


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        entry = {"level": record.levelname.lower(), "msg": record.getMessage()}
        try:  # pipeline stages log pre-formatted JSON with a stage tag
            parsed = json.loads(record.getMessage())
            if isinstance(parsed, dict):
                entry = {"level": record.levelname.lower(), **parsed}
        except (ValueError, TypeError):
            pass
        return json.dumps(entry)


def _setup_logging(verbose: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, handlers=[handler])


def _load_config_file(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    values: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise IngestError(f"bad config line {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _pipeline_config(cfg: dict[str, str], seed: int) -> PipelineConfig:
    kwargs = {}
    if "tau" in cfg:
        kwargs["tau"] = int(cfg["tau"])
    if "horizons" in cfg:
        kwargs["horizons"] = tuple(int(x) for x in cfg["horizons"].split(","))
    if "k" in cfg:
        kwargs["k"] = int(cfg["k"])
    if "num_trees" in cfg:
        kwargs["num_trees"] = int(cfg["num_trees"])
    if "timezone" in cfg:
        kwargs["timezone"] = cfg["timezone"]
    if "schedule_time" in cfg:
        kwargs["schedule_time"] = cfg["schedule_time"]
    return PipelineConfig(seed=seed, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mandicast")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--store", help="store path (default mandicast.db)")
    parser.add_argument("--seed", type=int, default=0, help="seed for stochastic components")
    parser.add_argument("--jobs", type=int, default=1, help="worker cap (reserved)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load observation and market CSVs into the store")
    p.add_argument("--observations", required=True)
    p.add_argument("--markets", required=True)

    p = sub.add_parser("impute", help="impute a produce panel and print the report")
    p.add_argument("--produce", required=True)
    p.add_argument("--max-rank", type=int, default=10)

    p = sub.add_parser("train", help="retrain models for one produce and market")
    p.add_argument("--produce", required=True)
    p.add_argument("--market", required=True)
    p.add_argument("--q", type=int, default=None)

    p = sub.add_parser("forecast", help="print the published forecast for a selection")
    p.add_argument("--produce", required=True)
    p.add_argument("--market", required=True)
    p.add_argument("--q", type=int, default=None)

    p = sub.add_parser("evaluate", help="run the hyperparameter sweep and emit a CSV table")
    p.add_argument("--from", dest="t1", required=True)
    p.add_argument("--to", dest="t2", required=True)
    p.add_argument("--grid", required=True, help="JSON file with max_rank/k/C/num_trees lists")
    p.add_argument("--produce", required=True)
    p.add_argument("--q", type=int, default=7)
    p.add_argument("--tau", type=int, default=10)

    p = sub.add_parser("daily-run", help="execute the six daily stages")
    p.add_argument("--date", default=None)
    p.add_argument("--source-dir", default=None,
                   help="directory of YYYY-MM-DD.csv files (falls back to config data_dir)")
    p.add_argument("--report-dir", default=None)

    p = sub.add_parser("retrain-due", help="refresh models older than retrain_every_days")
    p.add_argument("--date", default=None)

    p = sub.add_parser("serve", help="serve the HTTP API")
    p.add_argument("--bind", default="127.0.0.1:8000")
    return parser


def _open_store(args, cfg: dict[str, str]) -> Store:
    path = args.store or cfg.get("store_path", "mandicast.db")
    return Store(path)


def _cmd_ingest(args, cfg) -> int:
    store = _open_store(args, cfg)
    markets = parse_markets(Path(args.markets).read_bytes())
    rows = parse_observations(Path(args.observations).read_bytes())
    store.upsert_markets(markets)
    n = store.upsert_observations(rows)
    print(json.dumps({"markets": len(markets), "observations": n}))
    return 0


def _cmd_impute(args, cfg) -> int:
    store = _open_store(args, cfg)
    span = store.observation_date_range(args.produce)
    if span is None:
        print(f"no observations for produce {args.produce!r}", file=sys.stderr)
        return 1
    rows = store.observations(produce=args.produce)
    registry = store.markets()
    num_days = (span[1] - span[0]).days + 1
    price, _, _ = build_panels(rows, args.produce, span[0], num_days, registry)
    price, _ = clean_outliers(price)
    rank = min(args.max_rank, len(registry), num_days)
    _, report = soft_impute(price, ImputeConfig(max_rank=rank, rng_seed=args.seed))
    print(report.to_json())
    return 0


def _cmd_train(args, cfg) -> int:
    store = _open_store(args, cfg)
    config = _pipeline_config(cfg, args.seed)
    if args.q is not None:
        config.horizons = (args.q,)
    versions = retrain(args.produce, args.market, store, config)
    if not versions:
        print("insufficient history: no model version written", file=sys.stderr)
        return 1
    print(json.dumps({"produce": args.produce, "market_id": args.market,
                      "versions": {str(q): v for q, v in versions.items()}}))
    return 0


def _cmd_forecast(args, cfg) -> int:
    store = _open_store(args, cfg)
    records = store.published_forecasts(market_id=args.market, produce=args.produce)
    if args.q is not None:
        records = [r for r in records if r.q == args.q]
    if not records:
        print("no published forecast for this selection", file=sys.stderr)
        return 1
    payloads = [r.payload for r in sorted(records, key=lambda r: r.q)]
    print(json.dumps(payloads if len(payloads) > 1 else payloads[0], sort_keys=True))
    for payload in payloads:
        print(f"# evidence for q={payload['q']} (direction {payload['direction']})",
              file=sys.stderr)
        print(f"{'market':<14}{'step dates':<26}{'weight':>8}  {'price':>10}", file=sys.stderr)
        for e in payload["evidence"]:
            dates = f"{e['step_start_date']}..{e['step_end_date']}"
            print(
                f"{e['market_id']:<14}{dates:<26}{e['weight']:>8.3f}  {e['neighbor_price']:>10.2f}",
                file=sys.stderr,
            )
    return 0


def _cmd_evaluate(args, cfg) -> int:
    store = _open_store(args, cfg)
    grid = json.loads(Path(args.grid).read_text())
    span = store.observation_date_range(args.produce)
    if span is None:
        print(f"no observations for produce {args.produce!r}", file=sys.stderr)
        return 1
    rows = store.observations(produce=args.produce)
    registry = store.markets()
    num_days = (span[1] - span[0]).days + 1
    price, volume, _ = build_panels(rows, args.produce, span[0], num_days, registry)
    price, _ = clean_outliers(price)
    bundle = PanelBundle(price=price, volume=volume, registry=registry)
    config = CvConfig(
        t1=date.fromisoformat(args.t1),
        t2=date.fromisoformat(args.t2),
        grid=grid,
        q=args.q,
        tau=args.tau,
        seed=args.seed,
    )
    result = sweep(bundle, config)
    sys.stdout.write(result.to_csv())
    best = result.best
    print(
        json.dumps({"best": {"max_rank": best.max_rank, "k": best.k, "C": best.C,
                             "num_trees": best.num_trees},
                    "approximate": result.approximate}),
        file=sys.stderr,
    )
    return 0


def _cmd_daily_run(args, cfg) -> int:
    store = _open_store(args, cfg)
    config = _pipeline_config(cfg, args.seed)
    source_dir = args.source_dir or cfg.get("data_dir")
    if not source_dir:
        print("no --source-dir given and no data_dir in config", file=sys.stderr)
        return 1
    as_of = date.fromisoformat(args.date) if args.date else date.today()
    sink = FileReportSink(args.report_dir) if args.report_dir else None
    report = run_daily(as_of, store, [CsvDirSource(source_dir)], config, sink)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0 if report.ok else 1


def _cmd_retrain_due(args, cfg) -> int:
    store = _open_store(args, cfg)
    config = _pipeline_config(cfg, args.seed)
    if "retrain_every_days" in cfg:
        config.retrain_every_days = int(cfg["retrain_every_days"])
    as_of = date.fromisoformat(args.date) if args.date else date.today()
    refreshed = run_due_retrains(store, as_of, config)
    print(json.dumps(
        {f"{produce}/{market}": {str(q): v for q, v in versions.items()}
         for (produce, market), versions in refreshed.items()},
        sort_keys=True,
    ))
    return 0


def _cmd_serve(args, cfg) -> int:
    from .service import serve

    store = _open_store(args, cfg)
    serve(store, bind=args.bind)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    cfg = _load_config_file(args.config)
    handlers = {
        "ingest": _cmd_ingest,
        "impute": _cmd_impute,
        "train": _cmd_train,
        "forecast": _cmd_forecast,
        "evaluate": _cmd_evaluate,
        "daily-run": _cmd_daily_run,
        "retrain-due": _cmd_retrain_due,
        "serve": _cmd_serve,
    }
    try:
        return handlers[args.command](args, cfg)
    except IngestError as exc:
        print(f"ingest error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
