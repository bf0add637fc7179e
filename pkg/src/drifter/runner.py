"""Wiring: source -> engine -> published snapshot + alert log, for replay and live service."""
from __future__ import annotations

import json
import logging
import os
import select
import signal
import socket
import threading
import zlib
from collections import deque
from dataclasses import dataclass
from typing import Iterator, Optional

from drifter.config import CliConfig
from drifter.engine import Engine, WindowSnapshot, render_snapshot
from drifter.export import AlertLog, SnapshotStore
from drifter.ingest import GZIP_MAGIC, BatchReader, SourceConfig, SourceError, iter_lines, open_binary, wall_clock
from drifter.model import MiniBatch, ParseStats

log = logging.getLogger(__name__)


class Pipeline:
    """Single-writer per-window processing; publishes one snapshot per batch."""

    def __init__(self, cfg: CliConfig, alert_log: AlertLog, store: Optional[SnapshotStore] = None,
                 include_resources: bool = True, recent: Optional[deque] = None):
        self.engine = Engine(cfg.engine_config())
        self.alert_log = alert_log
        self.store = store if store is not None else SnapshotStore(render_snapshot(None))
        self.include_resources = include_resources
        self.recent = recent if recent is not None else deque(maxlen=1000)
        self.windows = 0

    def handle(self, batch: MiniBatch) -> WindowSnapshot:
        snap = self.engine.process_window(batch)
        self.alert_log.write_window(snap.alerts)
        self.recent.extend(snap.alerts)
        self.store.publish(snap, render_snapshot(snap, self.include_resources))
        self.windows += 1
        return snap


@dataclass
class ReplayResult:
    windows: int
    alerts: int
    stats: ParseStats


def replay(cfg: CliConfig, input_path: str, out_dir: str) -> ReplayResult:
    """Process a whole file in record time; write per-window dumps and the alert log.

    Output depends only on input bytes and configuration.
    """
    src = cfg.source_config(input_path)
    if input_path != "-" and not os.access(input_path, os.R_OK):
        raise SourceError(f"cannot read input {input_path}")
    win_dir = os.path.join(out_dir, "windows")
    os.makedirs(win_dir, exist_ok=True)
    for stale in os.listdir(win_dir):
        if stale.endswith(".prom"):
            os.remove(os.path.join(win_dir, stale))
    alert_path = os.path.join(out_dir, "alerts.jsonl")
    open(alert_path, "w").close()

    stats = ParseStats()
    n_alerts = 0
    with AlertLog(alert_path) as alert_log:
        pipe = Pipeline(cfg, alert_log, include_resources=False, recent=deque(maxlen=1))
        stream = open_binary(src)
        try:
            for batch in BatchReader(iter_lines(stream), src, clock=None, stats=stats):
                snap = pipe.handle(batch)
                n_alerts += len(snap.alerts)
                with open(os.path.join(win_dir, f"{snap.window_id:06d}.prom"), "w", encoding="utf-8") as fh:
                    fh.write(pipe.store.document)
        finally:
            stream.close()
    with open(os.path.join(out_dir, "parse_stats.json"), "w", encoding="utf-8") as fh:
        json.dump({"lines_ok": stats.lines_ok, "lines_rejected": stats.lines_rejected,
                   "first_error": stats.first_error, "windows": pipe.windows}, fh, sort_keys=True)
        fh.write("\n")
    return ReplayResult(pipe.windows, n_alerts, stats)


def poll_lines(path: str, compression: str, stop: threading.Event, poll_s: float = 0.5) -> Iterator[Optional[bytes]]:
    """Yield input lines, or ``None`` whenever ``poll_s`` passes without data."""
    fd = 0 if path == "-" else os.open(path, os.O_RDONLY)
    decomp = None
    decided = compression != "auto"
    if compression == "gzip":
        decomp = zlib.decompressobj(wbits=31)
    pending = b""
    try:
        while not stop.is_set():
            ready, _, _ = select.select([fd], [], [], poll_s)
            if not ready:
                yield None
                continue
            chunk = os.read(fd, 1 << 16)
            if not chunk:
                break
            if not decided:
                decided = True
                if chunk[:2] == GZIP_MAGIC:
                    decomp = zlib.decompressobj(wbits=31)
            if decomp is not None:
                try:
                    data = decomp.decompress(chunk)
                    while decomp.eof and decomp.unused_data:
                        rest = decomp.unused_data
                        decomp = zlib.decompressobj(wbits=31)
                        data += decomp.decompress(rest)
                except zlib.error as exc:
                    raise SourceError(f"decompression failure: {exc}") from exc
                chunk = data
            pending += chunk
            *lines, pending = pending.split(b"\n")
            for line in lines:
                yield line + b"\n"
        if pending and not stop.is_set():
            yield pending
    finally:
        if fd != 0:
            os.close(fd)


class Service:
    """Live mode: this object's thread runs ingest + engine, the caller's thread serves HTTP."""

    def __init__(self, cfg: CliConfig):
        self.cfg = cfg
        self.store = SnapshotStore(render_snapshot(None))
        self.recent: deque = deque(maxlen=1000)
        self.stop = threading.Event()
        self.error: Optional[BaseException] = None
        self.stats = ParseStats()
        self._thread = threading.Thread(target=self._run, name="drifter-engine", daemon=True)
        self.alert_log = AlertLog(cfg.export.alert_log)
        self.pipeline = Pipeline(cfg, self.alert_log, self.store, recent=self.recent)

    def _run(self) -> None:
        src: SourceConfig = self.cfg.source_config()
        reader = BatchReader((), src, clock=wall_clock, stats=self.stats)
        try:
            for line in poll_lines(src.path, src.compression, self.stop):
                batches = reader.feed(line) if line is not None else []
                batches += reader.tick(wall_clock())
                for b in batches:
                    self.pipeline.handle(b)
            for b in reader.scheduler.flush():
                self.pipeline.handle(b)
        except BaseException as exc:  # surfaced to the main thread via self.error
            log.exception("engine thread failed")
            self.error = exc
        finally:
            self.alert_log.close()

    def start(self) -> None:
        self._thread.start()

    def alive(self) -> bool:
        return self._thread.is_alive()

    def shutdown(self, timeout: float = 10.0) -> None:
        self.stop.set()
        self._thread.join(timeout)


def bind_socket(host: str, port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError:
        sock.close()
        raise
    sock.set_inheritable(True)
    return sock


def run_service(cfg: CliConfig) -> int:
    import uvicorn

    from drifter.service import create_app

    sock = bind_socket(cfg.export.host, cfg.export.port)
    service = Service(cfg)
    app = create_app(service.store, service.recent, service.alive)
    server = uvicorn.Server(uvicorn.Config(app, log_level="warning", lifespan="off"))
    # uvicorn re-raises the captured signal after its graceful shutdown; swallow it so
    # the process can flush and exit 0
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: None)
    service.start()
    try:
        server.run(sockets=[sock])
    finally:
        service.shutdown()
        sock.close()
    if service.error is not None:
        log.error("engine stopped with error: %s", service.error)
        return 1
    return 0
