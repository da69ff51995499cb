"""HTTP API over the store: forecasts, evidence, history, admin runs, health.

All reads resolve the published snapshot inside the store layer, so they are
consistent while the daily pipeline writes. Responses serialize stored payloads
verbatim (canonical JSON), never recomputing forecast numbers.
"""

from __future__ import annotations

import json
import os
from datetime import date

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse, Response

from .pipeline import PipelineConfig, ObservationSource, run_daily
from .store import Store

API_PREFIX = "/api/v1"

ADMIN_TOKEN_ENV = "MANDICAST_ADMIN_TOKEN"


def _not_found(code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=404, content={"error": {"code": code, "message": message}})


def _canonical(payload) -> Response:
    return Response(
        content=json.dumps(payload, sort_keys=True, separators=(",", ":")),
        media_type="application/json",
    )


def create_app(
    store: Store,
    sources: list[ObservationSource] | None = None,
    config: PipelineConfig | None = None,
    admin_token_env: str = ADMIN_TOKEN_ENV,
) -> FastAPI:
    app = FastAPI(title="mandicast", docs_url=None, redoc_url=None)
    config = config or PipelineConfig()

    @app.get(f"{API_PREFIX}/markets")
    def markets():
        return _canonical(
            [
                {
                    "market_id": m.market_id,
                    "name": m.name,
                    "latitude": m.latitude,
                    "longitude": m.longitude,
                    "state": m.state,
                }
                for m in store.markets()
            ]
        )

    @app.get(f"{API_PREFIX}/produce")
    def produce_list():
        return _canonical(store.produce_list())

    @app.get(f"{API_PREFIX}/forecast/{{market_id}}/{{produce}}")
    def forecast(market_id: str, produce: str):
        if not any(m.market_id == market_id for m in store.markets()):
            return _not_found("unknown_market", f"market {market_id!r} is not registered")
        if produce not in store.produce_list():
            return _not_found("unknown_produce", f"produce {produce!r} has no observations")
        records = store.published_forecasts(market_id=market_id, produce=produce)
        if not records:
            return _not_found("no_forecast", "no published forecast for this selection")
        horizons = []
        generated_at = None
        for rec in sorted(records, key=lambda r: r.q):
            payload = rec.payload
            generated_at = payload["generated_at"]
            horizons.append(
                {
                    "q": payload["q"],
                    "direction": payload["direction"],
                    "posterior": payload["posterior"],
                    "predicted_price_rs_per_quintal": payload["predicted_price_rs_per_quintal"],
                    "interval": payload["interval"],
                    "model_version": payload["model_version"],
                }
            )
        return _canonical({"generated_at": generated_at, "horizons": horizons})

    @app.get(f"{API_PREFIX}/evidence/{{market_id}}/{{produce}}")
    def evidence(market_id: str, produce: str, q: int = Query(...)):
        records = store.published_forecasts(market_id=market_id, produce=produce)
        match = [r for r in records if r.q == q]
        if not match:
            return _not_found("no_forecast", "no published forecast for this selection")
        return _canonical(match[0].payload["evidence"])

    @app.get(f"{API_PREFIX}/history/{{market_id}}/{{produce}}")
    def history(market_id: str, produce: str, days: int = Query(default=90, ge=1)):
        if not any(m.market_id == market_id for m in store.markets()):
            return _not_found("unknown_market", f"market {market_id!r} is not registered")
        imputed = store.published_imputed(produce, market_id, last_days=days)
        raw = {
            row.date.isoformat(): row.modal_price
            for row in store.observations(produce=produce)
            if row.market_id == market_id
        }
        return _canonical(
            {
                "market_id": market_id,
                "produce": produce,
                "days": [
                    {"date": day, "raw_price": raw.get(day), "imputed_price": price}
                    for day, price in imputed
                ],
            }
        )

    @app.post(f"{API_PREFIX}/admin/run")
    def admin_run(request: Request, run_date: str = Query(alias="date")):
        expected = os.environ.get(admin_token_env)
        supplied = request.headers.get("authorization", "")
        if not expected or supplied != f"Bearer {expected}":
            return JSONResponse(
                status_code=401,
                content={"error": {"code": "unauthorized", "message": "bad admin token"}},
            )
        if not sources:
            return JSONResponse(
                status_code=409,
                content={"error": {"code": "no_sources", "message": "no observation sources configured"}},
            )
        report = run_daily(date.fromisoformat(run_date), store, sources, config)
        return _canonical(report.to_dict())

    @app.get(f"{API_PREFIX}/healthz")
    def healthz():
        last = store.last_run()
        if last is None:
            return _canonical({"status": "ok", "last_run_date": None, "last_run_ok": None})
        run_date, _, report = last
        stages = report.get("stages", {})
        ok = all(s.get("status") == "ok" for s in stages.values())
        return _canonical({"status": "ok", "last_run_date": run_date, "last_run_ok": ok})

    return app


def serve(store: Store, bind: str = "127.0.0.1:8000",
          sources: list[ObservationSource] | None = None,
          config: PipelineConfig | None = None):
    """Run the API under uvicorn; bind is host:port."""
    import uvicorn

    host, _, port = bind.rpartition(":")
    uvicorn.run(create_app(store, sources, config), host=host or "127.0.0.1", port=int(port))
