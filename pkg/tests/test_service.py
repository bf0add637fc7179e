import threading
from collections import deque

import pytest
from fastapi.testclient import TestClient

from drifter.drift import DriftRule, RuleKind
from drifter.engine import Engine, EngineConfig, render_snapshot
from drifter.export import SnapshotStore, parse_exposition
from drifter.ingest import WindowMode
from drifter.model import MiniBatch, Record
from drifter.service import create_app
from expo_ref import parse_independent

W = 60_000


def batches(coverages):
    for wid, cov in enumerate(coverages):
        n_present = int(round(cov * 10))
        recs = [Record({"adv_id": "a", "hour": float(i)} if i < n_present else {"hour": float(i)}, i % 2, wid * W + i)
                for i in range(10)]
        yield MiniBatch(recs, wid, wid * W, (wid + 1) * W)


def engine():
    rule = DriftRule(RuleKind.RELATIVE_DELTA, "coverage", 25, W, W)
    return Engine(EngineConfig(window=WindowMode.by_time(W), rules=(rule,)))


@pytest.fixture
def served():
    store = SnapshotStore(render_snapshot(None))
    recent = deque(maxlen=10)
    client = TestClient(create_app(store, recent, ingest_active=lambda: False))
    return store, recent, client


def test_liveness_only_before_first_window(served):
    _, _, client = served
    r = client.get("/metrics")
    assert r.status_code == 200
    assert r.headers["content-type"].startswith("text/plain; version=0.0.4")
    fams = {s.family for s in parse_independent(r.text)}
    assert "drifter_up" in fams and not any(f.startswith("drifter_feature_") for f in fams)
    assert client.get("/snapshot").status_code == 404
    assert client.get("/healthz").json() == {"status": "ok", "window_id": None, "records_processed_total": 0,
                                             "ingest_active": False}


def test_scrapes_without_publication_are_identical(served):
    store, _, client = served
    snap = engine().process_window(next(batches([0.9])))
    store.publish(snap, render_snapshot(snap))
    assert client.get("/metrics").text == client.get("/metrics").text


def test_snapshot_and_alerts(served):
    store, recent, client = served
    eng = engine()
    for b in batches([0.9, 0.4]):
        snap = eng.process_window(b)
        recent.extend(snap.alerts)
        store.publish(snap, render_snapshot(snap))
    body = client.get("/snapshot").json()
    assert body["window_id"] == 1
    assert [f["name"] for f in body["features"]] == ["adv_id", "hour"]
    assert body["features"][0]["coverage"] == pytest.approx(0.4)
    assert body["alerts"][0]["window_id"] == 1
    assert len(client.get("/alerts", params={"limit": 5}).json()) == 1
    assert client.get("/alerts", params={"limit": -1}).status_code == 422
    assert client.get("/healthz").json()["records_processed_total"] == 20


def test_hammer_publish_and_scrape(served):
    store, _, client = served
    eng = engine()
    published = []
    for b in batches([0.9, 0.5] * 10):
        snap = eng.process_window(b)
        published.append((snap, render_snapshot(snap)))
    stop = threading.Event()

    def publisher():
        i = 0
        while not stop.is_set():
            store.publish(*published[i % len(published)])
            i += 1

    t = threading.Thread(target=publisher)
    t.start()
    try:
        for _ in range(300):
            doc = client.get("/metrics").text
            ids = {s.value for s in parse_exposition(doc) if s.family == "drifter_window_id"}
            assert len(ids) == 1
            assert parse_independent(doc)
    finally:
        stop.set()
        t.join()
