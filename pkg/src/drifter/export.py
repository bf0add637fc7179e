"""Prometheus text exposition, the published-snapshot holder, and the alert log."""
from __future__ import annotations

import math
import os
import re
import threading
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from drifter.drift import AlertEvent

CONTENT_TYPE = "text/plain; version=0.0.4"
METRIC_NAME_RE = re.compile(r"^[a-zA-Z_:][a-zA-Z0-9_:]*$")
LABEL_NAME_RE = re.compile(r"^[a-zA-Z_][a-zA-Z0-9_]*$")
KINDS = ("gauge", "counter")


class MetricNameError(ValueError):
    pass


@dataclass(frozen=True)
class MetricSample:
    family: str
    labels: tuple = ()
    value: float = 0.0
    kind: str = "gauge"

    def __post_init__(self):
        if not METRIC_NAME_RE.match(self.family):
            raise MetricNameError(f"invalid metric family name {self.family!r}")
        if self.kind not in KINDS:
            raise MetricNameError(f"unknown metric kind {self.kind!r}")
        if self.kind == "counter" and not self.family.endswith("_total"):
            raise MetricNameError(f"counter {self.family!r} must end in _total")
        labels = tuple((str(k), str(v)) for k, v in (
            self.labels.items() if isinstance(self.labels, dict) else self.labels))
        seen = set()
        for k, _ in labels:
            if not LABEL_NAME_RE.match(k):
                raise MetricNameError(f"invalid label name {k!r}")
            if k in seen:
                raise MetricNameError(f"duplicate label {k!r} on {self.family}")
            seen.add(k)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "value", float(self.value))


def escape_label_value(v: str) -> str:
    return v.replace("\\", "\\\\").replace("\n", "\\n").replace('"', '\\"')


def format_value(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "+Inf" if x > 0 else "-Inf"
    return repr(float(x))


def render_exposition(samples: Iterable[MetricSample]) -> str:
    """Group by family and sort by (family, labels); one ``# TYPE`` line per family."""
    families: dict[str, list[MetricSample]] = {}
    for s in samples:
        families.setdefault(s.family, []).append(s)
    out = []
    for family in sorted(families):
        group = families[family]
        kinds = {s.kind for s in group}
        if len(kinds) != 1:
            raise MetricNameError(f"family {family!r} mixes kinds {sorted(kinds)}")
        out.append(f"# TYPE {family} {group[0].kind}\n")
        for s in sorted(group, key=lambda s: s.labels):
            if s.labels:
                body = ",".join(f'{k}="{escape_label_value(v)}"' for k, v in s.labels)
                out.append(f"{family}{{{body}}} {format_value(s.value)}\n")
            else:
                out.append(f"{family} {format_value(s.value)}\n")
    return "".join(out)


_UNESCAPE = {"\\": "\\", "n": "\n", '"': '"'}


def _parse_labels(text: str, i: int, line_no: int) -> tuple[tuple, int]:
    labels = []
    while True:
        if text[i] == "}":
            return tuple(labels), i + 1
        m = re.compile(r"[a-zA-Z_][a-zA-Z0-9_]*").match(text, i)
        if not m or text[m.end():m.end() + 2] != '="':
            raise ValueError(f"line {line_no}: malformed label at column {i}")
        name = m.group(0)
        i = m.end() + 2
        buf = []
        while text[i] != '"':
            if text[i] == "\\":
                buf.append(_UNESCAPE.get(text[i + 1], "\\" + text[i + 1]))
                i += 2
            else:
                buf.append(text[i])
                i += 1
        labels.append((name, "".join(buf)))
        i += 1
        if text[i] == ",":
            i += 1


def parse_exposition(text: str) -> list[MetricSample]:
    """Minimal parser for the subset this module renders (TYPE lines, no timestamps)."""
    kinds: dict[str, str] = {}
    samples = []
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line or line.startswith("# HELP"):
            continue
        if line.startswith("# TYPE "):
            _, _, family, kind = line.split(" ", 3)
            kinds[family] = kind
            continue
        if line.startswith("#"):
            continue
        m = METRIC_NAME_RE.match(line.split("{", 1)[0].split(" ", 1)[0])
        if not m:
            raise ValueError(f"line {line_no}: bad metric name")
        family = m.group(0)
        i = len(family)
        labels: tuple = ()
        if i < len(line) and line[i] == "{":
            labels, i = _parse_labels(line, i + 1, line_no)
        value = float(line[i:].strip().replace("+Inf", "inf").replace("-Inf", "-inf"))
        samples.append(MetricSample(family, labels, value, kinds.get(family, "gauge")))
    return samples


class SnapshotStore:
    """Holds the latest published snapshot and its pre-rendered document.

    Publication swaps one tuple reference, so a reader sees either the old
    or the new pair and never a mixture.
    """

    def __init__(self, initial_document: str = ""):
        self._current: tuple = (None, initial_document)
        self._lock = threading.Lock()

    def publish(self, snapshot, document: str) -> None:
        with self._lock:
            self._current = (snapshot, document)

    def current(self) -> tuple:
        return self._current

    @property
    def snapshot(self):
        return self._current[0]

    @property
    def document(self) -> str:
        return self._current[1]


class AlertLog:
    """Append-only newline-delimited JSON alert log, fsynced once per window."""

    def __init__(self, path: Optional[str]):
        self.path = path
        self._fh = None
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            self._fh = open(path, "a", encoding="utf-8")

    def write_window(self, events: Sequence[AlertEvent]) -> None:
        if self._fh is None:
            return
        for e in events:
            self._fh.write(e.to_json() + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_alert_log(path: str) -> list[AlertEvent]:
    with open(path, encoding="utf-8") as fh:
        return [AlertEvent.from_json(line) for line in fh if line.strip()]
