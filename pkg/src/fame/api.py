"""HTTP API consumed by the dashboard and operations tooling."""

from __future__ import annotations

import logging
from datetime import datetime, timezone
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .detection import ALERT_STATES, UnknownAlert
from .engine import Engine
from .errors import DataError
from .feedback_tuning import Verdict, VerdictConflict

logger = logging.getLogger(__name__)


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="fame engine", version="0.1.0")

    def check_token(request: Request) -> None:
        token = engine.config.api_token
        if token and request.headers.get("x-api-token") != token:
            raise HTTPException(status_code=401, detail="missing or bad API token")

    guarded = [Depends(check_token)]

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "model_version": engine.state.version}

    @app.get("/alerts", dependencies=guarded)
    def list_alerts(
        state: str | None = None,
        direction: str | None = None,
        limit: int = 100,
        offset: int = 0,
    ) -> dict:
        if state is not None and state not in ALERT_STATES:
            raise HTTPException(status_code=400, detail=f"bad state {state!r}")
        if direction is not None and direction not in ("origin", "destination"):
            raise HTTPException(status_code=400, detail=f"bad direction {direction!r}")
        alerts = engine.alert_log.query(state=state, direction=direction, limit=limit, offset=offset)
        return {"alerts": [a.to_dict() for a in alerts], "total": len(engine.alert_log)}

    @app.get("/alerts/{alert_id}", dependencies=guarded)
    def get_alert(alert_id: str) -> dict:
        try:
            return engine.alert_log.get(alert_id).to_dict()
        except UnknownAlert:
            raise HTTPException(status_code=404, detail=f"unknown alert {alert_id}") from None

    @app.post("/alerts/{alert_id}/feedback", dependencies=guarded)
    async def post_feedback(alert_id: str, request: Request) -> dict:
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="body must be JSON") from None
        decision = body.get("decision")
        if decision not in ("confirmed_fraud", "false_positive"):
            raise HTTPException(status_code=400, detail=f"bad decision {decision!r}")
        verdict = Verdict(
            alert_id=alert_id,
            decision=decision,
            analyst=str(body.get("analyst", "")),
            decided_at=datetime.now(timezone.utc),
            comment=str(body.get("comment", "")),
        )
        try:
            alert = engine.record_verdict(verdict, force=bool(body.get("force", False)))
        except UnknownAlert:
            raise HTTPException(status_code=404, detail=f"unknown alert {alert_id}") from None
        except VerdictConflict as exc:
            return JSONResponse(
                status_code=409,
                content={"detail": str(exc), "alert": engine.alert_log.get(alert_id).to_dict()},
            )
        return alert.to_dict()

    @app.get("/profiles", dependencies=guarded)
    def list_profiles(operator: str | None = None, prefix: str | None = None, limit: int = 500) -> dict:
        rows = []
        for profile in engine.store.profiles():
            key = profile.key
            if operator and key.operator_code != operator:
                continue
            if prefix and key.dest_prefix != prefix:
                continue
            rows.append(
                {
                    "key": key.to_dict(),
                    "day_name": key.day_name,
                    "n_observations": profile.n_observations,
                    "low_confidence": profile.low_confidence,
                    "mean_x": profile.stats_x.mean,
                    "sd_x": profile.stats_x.sd,
                    "mean_y": profile.stats_y.mean,
                    "sd_y": profile.stats_y.sd,
                    "mean_z": profile.stats_z.mean,
                    "sd_z": profile.stats_z.sd,
                }
            )
            if len(rows) >= limit:
                break
        return {"profiles": rows}

    @app.get("/patterns/latest", dependencies=guarded)
    def latest_patterns() -> dict:
        return {
            "patterns": [
                {"window": window.to_dict(), "report": report.to_dict()}
                for window, report in engine.latest_reports
            ]
        }

    @app.get("/model", dependencies=guarded)
    def model_state() -> dict:
        return engine.state.to_dict()

    @app.post("/tune", dependencies=guarded)
    def tune() -> dict:
        try:
            run = engine.tune(trigger="manual")
        except DataError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None
        return run.to_dict()

    @app.get("/metrics", dependencies=guarded)
    def metrics() -> dict:
        return engine.metrics()

    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dir.is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
