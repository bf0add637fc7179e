"""Bounded metric history and sliding-window drift / outlier rules."""
from __future__ import annotations

import fnmatch
import json
import logging
import math
from collections import Counter, deque
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence

log = logging.getLogger(__name__)

EPSILON = 1e-12
DEFAULT_OUTLIER_COEFFICIENT = 0.5


class RuleKind(str, Enum):
    RELATIVE_DELTA = "relative_delta"
    ABSOLUTE_DELTA = "absolute_delta"
    STDDEV_OUTLIER = "stddev_outlier"


class MetricSeries:
    """Ring buffer of ``(timestamp_ms, value)`` points for one (metric, feature)."""

    def __init__(self, metric: str, feature: str, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.metric = metric
        self.feature = feature
        self.points: deque = deque(maxlen=capacity)

    @property
    def capacity(self) -> int:
        return self.points.maxlen

    def __len__(self):
        return len(self.points)

    def append(self, t: int, v: float) -> "MetricSeries":
        if self.points and t < self.points[-1][0]:
            raise ValueError(f"out-of-order point: {t} < {self.points[-1][0]}")
        self.points.append((int(t), float(v)))
        return self

    def window(self, end: int, width: int) -> list[float]:
        """Values with timestamp in ``(end - width, end]``."""
        lo = end - width
        return [v for t, v in self.points if lo < t <= end]


def series_append(s: MetricSeries, t: int, v: float) -> MetricSeries:
    return s.append(t, v)


def window_avg(s: MetricSeries, end: int, window: int) -> Optional[float]:
    if window <= 0:
        raise ValueError("window must be positive")
    vals = s.window(end, window)
    if not vals:
        return None
    return math.fsum(vals) / len(vals)


@dataclass(frozen=True)
class DriftRule:
    kind: RuleKind
    metric: str
    threshold: float = 0.0
    offset_interval: int = 0
    eval_window: int = 0
    outlier_coefficient: float = DEFAULT_OUTLIER_COEFFICIENT
    features: str = "*"

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.eval_window <= 0:
            raise ValueError("eval_window must be > 0")
        if self.kind is not RuleKind.STDDEV_OUTLIER and self.offset_interval < self.eval_window:
            raise ValueError("offset_interval must be >= eval_window for delta rules")
        if self.outlier_coefficient <= 0:
            raise ValueError("outlier_coefficient must be > 0")

    def matches(self, series: MetricSeries) -> bool:
        return series.metric == self.metric and fnmatch.fnmatchcase(series.feature, self.features)


@dataclass(frozen=True)
class AlertEvent:
    kind: str
    feature: str
    metric: str
    observed: float
    reference: float
    fired_at: int
    window_id: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "AlertEvent":
        return cls(**json.loads(line))


def _compare_windows(s, rule, now, diag):
    cur = window_avg(s, now, rule.eval_window)
    past = window_avg(s, now - rule.offset_interval, rule.eval_window)
    if cur is None or past is None:
        if diag is not None:
            diag["missing_data"] += 1
        return None
    return cur, past


def eval_relative_delta(s: MetricSeries, rule: DriftRule, now: int, window_id: int = -1,
                        diag: Optional[Counter] = None) -> Optional[AlertEvent]:
    # Literal typeset form: abs((avg(metric) offset interval) / avg(metric) * 100 > threshold,
    # which fires on any steady series when threshold < 100; percent change is used instead.
    pair = _compare_windows(s, rule, now, diag)
    if pair is None:
        return None
    cur, past = pair
    change = abs(past - cur) / max(abs(cur), EPSILON) * 100.0
    if change > rule.threshold:
        return AlertEvent(rule.kind.value, s.feature, s.metric, cur, past, now, window_id)
    return None


def eval_absolute_delta(s: MetricSeries, rule: DriftRule, now: int, window_id: int = -1,
                        diag: Optional[Counter] = None) -> Optional[AlertEvent]:
    # Literal typeset form: abs((avg(metric) offset interval) - avg(metric) * 100 > threshold;
    # the threshold is taken in the metric's own units.
    pair = _compare_windows(s, rule, now, diag)
    if pair is None:
        return None
    cur, past = pair
    if abs(past - cur) > rule.threshold:
        return AlertEvent(rule.kind.value, s.feature, s.metric, cur, past, now, window_id)
    return None


def eval_stddev_outlier(s: MetricSeries, rule: DriftRule, now: int, window_id: int = -1,
                        diag: Optional[Counter] = None) -> Optional[AlertEvent]:
    """stddev(metric) > coefficient * avg(metric) over the evaluation window."""
    vals = s.window(now, rule.eval_window)
    if len(vals) < 2:
        if diag is not None:
            diag["insufficient_points"] += 1
        return None
    mean = math.fsum(vals) / len(vals)
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / len(vals))
    if std > rule.outlier_coefficient * mean:
        return AlertEvent(rule.kind.value, s.feature, s.metric, std, mean, now, window_id)
    return None


_EVALUATORS = {
    RuleKind.RELATIVE_DELTA: eval_relative_delta,
    RuleKind.ABSOLUTE_DELTA: eval_absolute_delta,
    RuleKind.STDDEV_OUTLIER: eval_stddev_outlier,
}


class SeriesStore:
    """All metric series of one pipeline, keyed by (metric, feature)."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._series: dict[tuple[str, str], MetricSeries] = {}

    def append(self, metric: str, feature: str, t: int, v: float) -> None:
        key = (metric, feature)
        s = self._series.get(key)
        if s is None:
            s = self._series[key] = MetricSeries(metric, feature, self.capacity)
        s.append(t, v)

    def get(self, metric: str, feature: str) -> Optional[MetricSeries]:
        return self._series.get((metric, feature))

    def __iter__(self) -> Iterator[MetricSeries]:
        return iter(self._series.values())

    def __len__(self):
        return len(self._series)


def evaluate_all(rules: Sequence[DriftRule], store: Iterable[MetricSeries], now: int,
                 window_id: int = -1, diag: Optional[Counter] = None) -> list[AlertEvent]:
    """Run every rule over every matching series; output sorted by metric, feature, kind."""
    fired = []
    for series in store:
        for order, rule in enumerate(rules):
            if not rule.matches(series):
                continue
            try:
                event = _EVALUATORS[rule.kind](series, rule, now, window_id, diag)
            except Exception:
                log.exception("rule %s on %s/%s failed", rule.kind.value, series.metric, series.feature)
                if diag is not None:
                    diag["rule_errors"] += 1
                continue
            if event is not None:
                fired.append((event.metric, event.feature, event.kind, order, event))
    fired.sort(key=lambda item: item[:4])
    return [item[-1] for item in fired]
