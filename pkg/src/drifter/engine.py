"""Per-window monitoring pipeline: profiles, ranking, metric series, drift rules."""
from __future__ import annotations

import fnmatch
import logging
import math
import resource
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import xxhash

from drifter.drift import AlertEvent, DriftRule, RuleKind, SeriesStore, evaluate_all
from drifter.export import MetricSample, render_exposition
from drifter.ingest import WindowMode
from drifter.model import DEFAULT_BUCKET_COUNT, FIELD_SEPARATOR, MiniBatch, render_value
from drifter.ranking import (DEFAULT_CONTINGENCY_WIDTH, DEFAULT_INTERACTION_CAP, RankingResult,
                             SparseColumn, rank_batch)
from drifter.sketches import (DEFAULT_MAX_BINS, DEFAULT_PRECISION, DEFAULT_QUANTILES, FeatureProfile,
                              ProfileSnapshot)

log = logging.getLogger(__name__)

COVERAGE = "coverage"
CARDINALITY = "cardinality"
STDDEV = "stddev"
MI_SCORE = "mi_score"
QUANTILE_PREFIX = "quantile:"

DATA_QUALITY_KINDS = ("parse_rejections", "feature_cap")
ALERT_KINDS = tuple(k.value for k in RuleKind) + DATA_QUALITY_KINDS
_U64 = (1 << 64) - 1


def quantile_metric(q: float) -> str:
    return f"{QUANTILE_PREFIX}{q!r}"


@dataclass
class EngineConfig:
    bucket_count: int = DEFAULT_BUCKET_COUNT
    hll_precision: int = DEFAULT_PRECISION
    histogram_bins: int = DEFAULT_MAX_BINS
    interaction_cap: int = DEFAULT_INTERACTION_CAP
    contingency_width: int = DEFAULT_CONTINGENCY_WIDTH
    ranking_seed: int = 0
    rank_every: int = 1
    quantiles: Sequence[float] = DEFAULT_QUANTILES
    rules: Sequence[DriftRule] = ()
    window: WindowMode = field(default_factory=WindowMode)
    allow: Sequence[str] = ("*",)
    deny: Sequence[str] = ()
    max_features: int = 10_000
    series_capacity: Optional[int] = None
    rejected_budget: float = 0.5

    def __post_init__(self):
        if self.bucket_count < 2:
            raise ValueError("bucket_count must be >= 2")
        if not 4 <= self.hll_precision <= 16:
            raise ValueError("hll_precision must be in [4, 16]")
        if self.histogram_bins < 2:
            raise ValueError("histogram_bins must be >= 2")
        if self.interaction_cap < 0:
            raise ValueError("interaction_cap must be >= 0")
        if self.contingency_width < 2:
            raise ValueError("contingency_width must be >= 2")
        if self.rank_every < 1:
            raise ValueError("rank_every must be >= 1")
        if any(not 0.0 <= q <= 1.0 for q in self.quantiles):
            raise ValueError("quantiles must lie in [0, 1]")
        if self.max_features < 1:
            raise ValueError("max_features must be >= 1")
        if not 0.0 <= self.rejected_budget <= 1.0:
            raise ValueError("rejected_budget must lie in [0, 1]")

    def resolved_capacity(self) -> int:
        """Points kept per series: enough to cover the widest rule span plus one window."""
        if self.series_capacity is not None:
            return self.series_capacity
        step = self.window.interval_ms if self.window.kind != "by_count" else None
        if not self.rules or step is None:
            return 64
        span = max(r.eval_window + (r.offset_interval if r.kind is not RuleKind.STDDEV_OUTLIER else 0)
                   for r in self.rules)
        return max(2, math.ceil(span / step) + 1)

    def admits(self, name: str) -> bool:
        if any(fnmatch.fnmatchcase(name, p) for p in self.deny):
            return False
        return any(fnmatch.fnmatchcase(name, p) for p in self.allow)


@dataclass(frozen=True)
class WindowSnapshot:
    window_id: int
    window_start: int
    window_end: int
    profiles: Mapping[str, ProfileSnapshot]
    ranking: Optional[RankingResult]
    alerts: tuple
    records: int
    rejected: int
    processing_seconds: float
    records_processed_total: int
    parse_rejected_total: int
    alerts_total: Mapping[str, int]
    diagnostics: Mapping[str, int]
    peak_rss_bytes: int = 0
    quantiles: tuple = DEFAULT_QUANTILES


HASH_CACHE_LIMIT = 4096


def _hash_values(name: str, values: list, cache: dict) -> np.ndarray:
    """Hashes of ``values`` under ``name``; ``cache`` persists per feature and is reset when full."""
    prefix = name.encode("utf-8") + FIELD_SEPARATOR
    digest = xxhash.xxh64_intdigest
    out = []
    for v in values:
        h = cache.get(v)
        if h is None:
            if type(v) is float:
                text = str(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)
            else:
                text = render_value(v)
            h = digest(prefix + text.encode("utf-8"))
            if len(cache) >= HASH_CACHE_LIMIT:
                cache.clear()
            cache[v] = h
        out.append(h)
    return np.array(out, dtype=np.uint64)


class Engine:
    """Holds cross-window state; ``process_window`` is the only writer."""

    def __init__(self, cfg: EngineConfig):
        self.cfg = cfg
        self.features: dict[str, None] = {}
        self.store = SeriesStore(cfg.resolved_capacity())
        self.last_window_id: Optional[int] = None
        self.records_processed_total = 0
        self.parse_rejected_total = 0
        self.alerts_total: Counter = Counter({k: 0 for k in ALERT_KINDS})
        self.diagnostics: Counter = Counter()
        self._admission: dict[str, bool] = {}
        self._hash_cache: dict[str, dict] = {}
        self._windows_seen = 0

    def _admit(self, name: str) -> bool:
        ok = self._admission.get(name)
        if ok is None:
            ok = self.cfg.admits(name)
            if ok and name not in self.features and len(self.features) >= self.cfg.max_features:
                ok = False
                self.diagnostics["features_refused"] += 1
                self._refused_this_window += 1
            elif ok:
                self.features[name] = None
            self._admission[name] = ok
        return ok

    def _columns(self, batch: MiniBatch) -> dict[str, tuple[list, list]]:
        cols: dict[str, tuple[list, list]] = {}
        admit = self._admit
        for i, rec in enumerate(batch.records):
            for name, value in rec.features.items():
                entry = cols.get(name)
                if entry is None:
                    if not admit(name):
                        continue
                    entry = cols[name] = ([], [])
                entry[0].append(i)
                entry[1].append(value)
        return cols

    def _new_profile(self, name: str) -> FeatureProfile:
        return FeatureProfile(name, precision=self.cfg.hll_precision, max_bins=self.cfg.histogram_bins)

    def process_window(self, batch: MiniBatch) -> WindowSnapshot:
        if self.last_window_id is not None and batch.window_id <= self.last_window_id:
            raise ValueError(f"window_id {batch.window_id} does not advance past {self.last_window_id}")
        t0 = time.perf_counter()
        cfg = self.cfg
        n = len(batch.records)
        self._refused_this_window = 0
        raw = self._columns(batch)

        profiles: dict[str, FeatureProfile] = {}
        columns: dict[str, SparseColumn] = {}
        bucket_mod = np.uint64(cfg.bucket_count)
        for name in sorted(self.features):
            prof = self._new_profile(name)
            try:
                rows, values = raw.get(name, ((), ()))
                hashes = _hash_values(name, values, self._hash_cache.setdefault(name, {}))
                numeric = np.array([v for v in values if not isinstance(v, str)], dtype=np.float64)
                prof.update_column(n, hashes, numeric)
                columns[name] = SparseColumn(n, np.array(rows, dtype=np.int64),
                                             (hashes % bucket_mod).astype(np.int64))
            except Exception:
                log.exception("feature %s failed in window %d", name, batch.window_id)
                self.diagnostics["feature_errors"] += 1
                continue
            profiles[name] = prof

        ranking = None
        if self._windows_seen % cfg.rank_every == 0 and columns:
            if any(r.label is not None for r in batch.records):
                seed = (cfg.ranking_seed ^ (batch.window_id * 0x9E3779B97F4A7C15)) & _U64
                ranking = rank_batch(batch, columns, cfg.interaction_cap, seed,
                                     width=cfg.contingency_width, bucket_count=cfg.bucket_count)
                for name, score in ranking.scores.items():
                    profiles[name].relevance = score
            else:
                self.diagnostics["unlabeled_windows"] += 1
        self._windows_seen += 1

        now = batch.window_end
        frozen = {}
        for name, prof in profiles.items():
            snap = prof.freeze(cfg.quantiles)
            frozen[name] = snap
            try:
                self._append_metrics(name, snap, now)
            except Exception:
                log.exception("metric append for %s failed", name)
                self.diagnostics["feature_errors"] += 1

        diag: Counter = Counter()
        alerts = evaluate_all(cfg.rules, self.store, now, batch.window_id, diag)
        self.diagnostics.update(diag)
        alerts = self._dedupe(alerts)
        alerts.extend(self._quality_alerts(batch, now))

        self.last_window_id = batch.window_id
        self.records_processed_total += n
        self.parse_rejected_total += batch.rejected
        for a in alerts:
            self.alerts_total[a.kind] += 1
        return WindowSnapshot(
            window_id=batch.window_id,
            window_start=batch.window_start,
            window_end=batch.window_end,
            profiles=frozen,
            ranking=ranking,
            alerts=tuple(alerts),
            records=n,
            rejected=batch.rejected,
            processing_seconds=time.perf_counter() - t0,
            records_processed_total=self.records_processed_total,
            parse_rejected_total=self.parse_rejected_total,
            alerts_total=dict(self.alerts_total),
            diagnostics=dict(self.diagnostics),
            peak_rss_bytes=resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024,
            quantiles=tuple(cfg.quantiles),
        )

    def _append_metrics(self, name: str, snap: ProfileSnapshot, t: int) -> None:
        self.store.append(COVERAGE, name, t, snap.coverage)
        self.store.append(CARDINALITY, name, t, snap.cardinality)
        if snap.stddev is not None:
            self.store.append(STDDEV, name, t, snap.stddev)
        if snap.relevance is not None:
            self.store.append(MI_SCORE, name, t, snap.relevance)
        for q, v in snap.quantiles:
            self.store.append(quantile_metric(q), name, t, v)

    def _dedupe(self, alerts: list[AlertEvent]) -> list[AlertEvent]:
        seen = set()
        out = []
        for a in alerts:
            key = (a.kind, a.metric, a.feature, a.window_id)
            if key not in seen:
                seen.add(key)
                out.append(a)
        return out

    def _quality_alerts(self, batch: MiniBatch, now: int) -> list[AlertEvent]:
        out = []
        seen = len(batch.records) + batch.rejected
        if seen and batch.rejected / seen > self.cfg.rejected_budget:
            out.append(AlertEvent("parse_rejections", "*", "parse_rejected_fraction",
                                  batch.rejected / seen, self.cfg.rejected_budget, now, batch.window_id))
        if self._refused_this_window:
            out.append(AlertEvent("feature_cap", "*", "features_refused",
                                  float(self._refused_this_window), float(self.cfg.max_features),
                                  now, batch.window_id))
        return out


def process_window(batch: MiniBatch, engine: Engine) -> WindowSnapshot:
    return engine.process_window(batch)


def liveness_metrics() -> list[MetricSample]:
    """What a scrape shows before the first window closes."""
    return [
        MetricSample("drifter_up", (), 1.0),
        MetricSample("drifter_records_processed_total", (), 0.0, "counter"),
        MetricSample("drifter_parse_rejected_total", (), 0.0, "counter"),
    ]


def snapshot_metrics(s: Optional[WindowSnapshot], include_resources: bool = True) -> list[MetricSample]:
    """Flatten a snapshot into metric samples.

    ``include_resources=False`` drops wall-time and memory gauges so replay
    dumps stay byte-identical across runs.
    """
    if s is None:
        return liveness_metrics()
    out = [
        MetricSample("drifter_up", (), 1.0),
        MetricSample("drifter_window_id", (), s.window_id),
        MetricSample("drifter_window_start_ms", (), s.window_start),
        MetricSample("drifter_window_end_ms", (), s.window_end),
        MetricSample("drifter_window_records", (), s.records),
        MetricSample("drifter_features_tracked", (), len(s.profiles)),
        MetricSample("drifter_records_processed_total", (), s.records_processed_total, "counter"),
        MetricSample("drifter_parse_rejected_total", (), s.parse_rejected_total, "counter"),
        MetricSample("drifter_interactions_evaluated", (),
                     s.ranking.evaluated_pairs if s.ranking is not None else 0),
    ]
    for kind in sorted(s.alerts_total):
        out.append(MetricSample("drifter_alerts_total", (("kind", kind),), s.alerts_total[kind], "counter"))
    for key in sorted(s.diagnostics):
        out.append(MetricSample("drifter_diagnostics_total", (("event", key),), s.diagnostics[key], "counter"))
    for name in sorted(s.profiles):
        p = s.profiles[name]
        lab = (("feature", name),)
        out.append(MetricSample("drifter_feature_coverage", lab, p.coverage))
        out.append(MetricSample("drifter_feature_cardinality", lab, p.cardinality))
        if p.stddev is not None:
            out.append(MetricSample("drifter_feature_stddev", lab, p.stddev))
        if p.relevance is not None:
            out.append(MetricSample("drifter_feature_mi_score", lab, p.relevance))
        for q, v in p.quantiles:
            out.append(MetricSample("drifter_feature_quantile", (("feature", name), ("q", repr(q))), v))
    if include_resources:
        out.append(MetricSample("drifter_window_processing_seconds", (), s.processing_seconds))
        out.append(MetricSample("drifter_process_peak_rss_bytes", (), s.peak_rss_bytes))
        rate = s.records / s.processing_seconds if s.processing_seconds > 0 else 0.0
        out.append(MetricSample("drifter_records_per_second", (), rate))
    return out


def render_snapshot(s: Optional[WindowSnapshot], include_resources: bool = True) -> str:
    return render_exposition(snapshot_metrics(s, include_resources))
