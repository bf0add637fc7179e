"""FastAPI app exposing the latest published snapshot.

Handlers are ``async`` so requests run on the server's event loop and no
extra worker pool is spawned next to the engine thread.
"""
from __future__ import annotations

from collections import deque
from dataclasses import asdict
from typing import Callable, Optional

from fastapi import FastAPI, HTTPException, Query, Response

from drifter import __version__
from drifter.export import CONTENT_TYPE, SnapshotStore
from drifter.service.schemas import Alert, FeatureSummary, Health, SnapshotSummary


def summarize(snapshot) -> SnapshotSummary:
    features = [
        FeatureSummary(name=p.name, coverage=p.coverage, cardinality=p.cardinality, stddev=p.stddev,
                       mi_score=p.relevance, quantiles={repr(q): v for q, v in p.quantiles})
        for _, p in sorted(snapshot.profiles.items())
    ]
    return SnapshotSummary(
        window_id=snapshot.window_id,
        window_start=snapshot.window_start,
        window_end=snapshot.window_end,
        records=snapshot.records,
        rejected=snapshot.rejected,
        interactions_evaluated=snapshot.ranking.evaluated_pairs if snapshot.ranking else 0,
        features=features,
        alerts=[Alert(**asdict(a)) for a in snapshot.alerts],
    )


def create_app(store: SnapshotStore, recent_alerts: Optional[deque] = None,
               ingest_active: Callable[[], bool] = lambda: True) -> FastAPI:
    app = FastAPI(title="drifter", version=__version__)
    recent = recent_alerts if recent_alerts is not None else deque(maxlen=1000)

    @app.get("/metrics")
    async def metrics():
        _, document = store.current()
        return Response(content=document, media_type=CONTENT_TYPE)

    @app.get("/healthz", response_model=Health)
    async def healthz():
        snap = store.snapshot
        return Health(status="ok",
                      window_id=snap.window_id if snap is not None else None,
                      records_processed_total=snap.records_processed_total if snap is not None else 0,
                      ingest_active=ingest_active())

    @app.get("/snapshot", response_model=SnapshotSummary)
    async def snapshot():
        snap = store.snapshot
        if snap is None:
            raise HTTPException(status_code=404, detail="no window completed yet")
        return summarize(snap)

    @app.get("/alerts", response_model=list[Alert])
    async def alerts(limit: int = Query(100, ge=0, le=1000)):
        items = list(recent)[-limit:] if limit else []
        return [Alert(**asdict(a)) for a in items]

    return app
