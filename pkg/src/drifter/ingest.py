"""Record parsing (VW-like, JSONL, CSV) and mini-batch window scheduling."""
from __future__ import annotations

import csv
import gzip
import io
import json
import logging
import math
import sys
import time
import zlib
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Iterable, Iterator, Optional

from drifter.model import MiniBatch, ParseError, ParseStats, Record, valid_feature_name

log = logging.getLogger(__name__)

DEFAULT_WINDOW_MS = 600_000
GZIP_MAGIC = b"\x1f\x8b"


class SourceError(RuntimeError):
    """Fatal, non-recoverable input failure (unreadable or corrupt stream)."""


@dataclass(frozen=True)
class WindowMode:
    kind: str = "by_time"
    count: Optional[int] = None
    interval_ms: Optional[int] = DEFAULT_WINDOW_MS

    def __post_init__(self):
        if self.kind not in ("by_count", "by_time", "hybrid"):
            raise ValueError(f"unknown window mode {self.kind!r}")
        if self.kind in ("by_count", "hybrid") and (self.count is None or self.count < 1):
            raise ValueError("window count N must be >= 1")
        if self.kind in ("by_time", "hybrid") and (self.interval_ms is None or self.interval_ms < 1000):
            raise ValueError("window interval must be >= 1000 ms")

    @classmethod
    def by_count(cls, n: int) -> "WindowMode":
        return cls("by_count", n, None)

    @classmethod
    def by_time(cls, interval_ms: int = DEFAULT_WINDOW_MS) -> "WindowMode":
        return cls("by_time", None, interval_ms)

    @classmethod
    def hybrid(cls, n: int, interval_ms: int = DEFAULT_WINDOW_MS) -> "WindowMode":
        return cls("hybrid", n, interval_ms)


@dataclass(frozen=True)
class SourceConfig:
    path: str = "-"
    format: str = "vw_like"
    compression: str = "auto"
    window: WindowMode = field(default_factory=WindowMode)

    def __post_init__(self):
        if self.format not in ("vw_like", "jsonl", "csv"):
            raise ValueError(f"unknown input format {self.format!r}")
        if self.compression not in ("auto", "none", "gzip"):
            raise ValueError(f"unknown compression {self.compression!r}")


def _byte_offset(line: str, i: int) -> int:
    return len(line[:i].encode("utf-8"))


def _parse_label(tok: str, line: str, pos: int) -> int:
    try:
        x = float(tok)
    except ValueError:
        raise ParseError(f"malformed label {tok!r}", _byte_offset(line, pos)) from None
    if x == 1.0:
        return 1
    if x in (0.0, -1.0):
        return 0
    raise ParseError(f"label must be -1, 0 or 1, got {tok!r}", _byte_offset(line, pos))


def parse_vw_line(line: str, default_ts: int = 0) -> Record:
    """``<label> [<weight>] | [ns ]feat[:value] ... [|ns2 ...]``.

    Bare features become the token ``"1"``; ``ns^feat`` names namespaced
    features; a default-namespace ``ts:<epoch_ms>`` sets the timestamp.
    """
    line = line.rstrip("\r\n")
    bar = line.find("|")
    if bar < 0:
        raise ParseError("missing '|' feature section", _byte_offset(line, len(line)))
    head = line[:bar].split()
    label = None
    if head:
        label = _parse_label(head[0], line, line.find(head[0]))
        if len(head) > 2:
            raise ParseError(f"unexpected token {head[2]!r} before '|'", _byte_offset(line, line.find(head[2])))
        if len(head) == 2:
            try:
                weight = float(head[1])
            except ValueError:
                weight = math.nan
            if not math.isfinite(weight) or weight < 0:
                raise ParseError(f"malformed weight {head[1]!r}", _byte_offset(line, line.find(head[1])))

    features: dict = {}
    ts = None
    pos = bar
    for section in line[bar + 1:].split("|"):
        start = pos + 1
        pos = start + len(section)
        ns = ""
        body = section
        if section and not section[0].isspace():
            ns, _, body = section.partition(" ")
            if ":" in ns:
                raise ParseError(f"namespace scaling is not supported: {ns!r}", _byte_offset(line, start))
        for tok in body.split():
            name, sep, raw = tok.partition(":")
            if not name:
                raise ParseError(f"empty feature name in {tok!r}", _byte_offset(line, line.find(tok, start)))
            if sep:
                try:
                    value = float(raw)
                except ValueError:
                    value = math.nan
                if not math.isfinite(value):
                    raise ParseError(f"non-numeric value {raw!r} for feature {name!r}",
                                     _byte_offset(line, line.find(tok, start)))
            else:
                value = "1"
            if not ns and name == "ts" and sep:
                if not value.is_integer() or value < 0:
                    raise ParseError(f"timestamp must be integral epoch ms, got {raw!r}",
                                     _byte_offset(line, line.find(tok, start)))
                ts = int(value)
                continue
            features[f"{ns}^{name}" if ns else name] = value
    return Record(features, label, default_ts if ts is None else ts)


def parse_jsonl_line(line: str, default_ts: int = 0) -> Record:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.pos) from None
    if not isinstance(obj, dict):
        raise ParseError("line must hold a JSON object", 0)
    extra = set(obj) - {"label", "ts", "features"}
    if extra:
        raise ParseError(f"unknown keys {sorted(extra)}", 0)
    label = obj.get("label")
    if label is not None:
        if isinstance(label, bool) or not isinstance(label, (int, float)) or label not in (-1, 0, 1):
            raise ParseError(f"label must be -1, 0 or 1, got {label!r}", 0)
        label = 1 if label == 1 else 0
    ts = obj.get("ts", default_ts)
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
        raise ParseError(f"ts must be a non-negative integer, got {ts!r}", 0)
    raw = obj.get("features", {})
    if not isinstance(raw, dict):
        raise ParseError("'features' must be a flat object", 0)
    features = {}
    for name, v in raw.items():
        if not valid_feature_name(name):
            raise ParseError(f"invalid feature name {name!r}", 0)
        if isinstance(v, str):
            features[name] = v
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            if not math.isfinite(v):
                raise ParseError(f"non-finite value for {name!r}", 0)
            features[name] = float(v)
        else:
            raise ParseError(f"feature {name!r} must be a string or number", 0)
    return Record(features, label, ts)


class CsvLineParser:
    """Header-first CSV; ``label`` and ``ts`` columns are special, empty cells are missing."""

    def __init__(self):
        self.header: Optional[list[str]] = None

    def __call__(self, line: str, default_ts: int = 0) -> Optional[Record]:
        try:
            row = next(csv.reader([line]), [])
        except csv.Error as exc:
            raise ParseError(f"malformed CSV: {exc}", 0) from None
        if self.header is None:
            names = [c.strip() for c in row]
            if not names or not all(valid_feature_name(c) for c in names):
                raise ParseError("invalid CSV header", 0)
            self.header = names
            return None
        if len(row) != len(self.header):
            raise ParseError(f"expected {len(self.header)} fields, got {len(row)}", 0)
        features, label, ts = {}, None, default_ts
        for name, cell in zip(self.header, row):
            cell = cell.strip()
            if not cell:
                continue
            if name == "label":
                label = _parse_label(cell, line, 0)
            elif name == "ts":
                try:
                    ts = int(cell)
                except ValueError:
                    raise ParseError(f"malformed ts {cell!r}", 0) from None
            else:
                try:
                    x = float(cell)
                    features[name] = x if math.isfinite(x) else cell
                except ValueError:
                    features[name] = cell
        return Record(features, label, ts)


def make_parser(fmt: str) -> Callable[[str, int], Optional[Record]]:
    if fmt == "vw_like":
        return parse_vw_line
    if fmt == "jsonl":
        return parse_jsonl_line
    if fmt == "csv":
        return CsvLineParser()
    raise ValueError(f"unknown format {fmt!r}")


def open_binary(cfg: SourceConfig) -> BinaryIO:
    """Open the source, transparently gunzipping when configured or sniffed."""
    try:
        raw = sys.stdin.buffer if cfg.path == "-" else open(cfg.path, "rb")
    except OSError as exc:
        raise SourceError(f"cannot open {cfg.path}: {exc}") from exc
    buffered = raw if isinstance(raw, io.BufferedReader) else io.BufferedReader(raw)
    compressed = cfg.compression == "gzip" or (
        cfg.compression == "auto" and buffered.peek(2)[:2] == GZIP_MAGIC)
    if compressed:
        return gzip.GzipFile(fileobj=buffered, mode="rb")
    return buffered


def iter_lines(stream: BinaryIO) -> Iterator[bytes]:
    try:
        for raw in stream:
            yield raw
    except (OSError, EOFError, zlib.error) as exc:
        raise SourceError(f"decompression/read failure: {exc}") from exc


class WindowScheduler:
    """Groups timestamped records into mini-batches.

    Count-closed batches span ``[first_ts, last_ts + 1)``; time-closed
    batches span their aligned interval. Empty time windows consume a
    window id without producing a batch.
    """

    def __init__(self, mode: WindowMode, first_window_id: int = 0):
        self.mode = mode
        self.next_id = first_window_id
        self.buffer: list[Record] = []
        self.rejected = 0
        self._aligned_start: Optional[int] = None
        self._split_in_window = False
        self._last_ts: Optional[int] = None

    @property
    def _timed(self) -> bool:
        return self.mode.kind in ("by_time", "hybrid")

    def _aligned(self, ts: int) -> int:
        dt = self.mode.interval_ms
        return ts - ts % dt

    def _emit(self, start: int, end: int) -> MiniBatch:
        batch = MiniBatch(tuple(self.buffer), self.next_id, start, end, self.rejected)
        self.next_id += 1
        self.buffer = []
        self.rejected = 0
        return batch

    def _emit_counted(self) -> MiniBatch:
        return self._emit(self.buffer[0].timestamp, self.buffer[-1].timestamp + 1)

    def _close_aligned(self) -> list[MiniBatch]:
        out = []
        start = self._aligned_start
        end = start + self.mode.interval_ms
        if self.buffer:
            lo = self.buffer[0].timestamp if self._split_in_window else start
            out.append(self._emit(lo, end))
        elif not self._split_in_window:
            self.next_id += 1
        self._split_in_window = False
        return out

    def _advance_to(self, ts: int) -> list[MiniBatch]:
        out = []
        target = self._aligned(ts)
        if self._aligned_start is None:
            self._aligned_start = target
            return out
        if target > self._aligned_start:
            out.extend(self._close_aligned())
            skipped = (target - self._aligned_start) // self.mode.interval_ms - 1
            self.next_id += skipped
            self._aligned_start = target
        return out

    def push(self, record: Record) -> list[MiniBatch]:
        if self._last_ts is not None and record.timestamp < self._last_ts:
            raise ParseError(f"out-of-order timestamp {record.timestamp} < {self._last_ts}", 0)
        if self._timed and self._aligned_start is not None and record.timestamp < self._aligned_start:
            raise ParseError(f"late record: timestamp {record.timestamp} precedes open window "
                             f"starting at {self._aligned_start}", 0)
        self._last_ts = record.timestamp
        out = self._advance_to(record.timestamp) if self._timed else []
        self.buffer.append(record)
        if self.mode.kind in ("by_count", "hybrid") and len(self.buffer) >= self.mode.count:
            out.append(self._emit_counted())
            self._split_in_window = True
        return out

    def reject(self) -> None:
        self.rejected += 1

    def tick(self, now: int) -> list[MiniBatch]:
        """Close time windows that ended before ``now`` (live mode)."""
        if not self._timed or self._aligned_start is None:
            return []
        if self._aligned(now) > self._aligned_start:
            return self._advance_to(now)
        return []

    def flush(self) -> list[MiniBatch]:
        if not self.buffer:
            return []
        if self._timed:
            out = self._close_aligned()
        else:
            out = [self._emit_counted()]
        return out


Clock = Callable[[], int]


def wall_clock() -> int:
    return int(time.time() * 1000)


class BatchReader:
    """Reads one source and yields mini-batches; parse failures never abort.

    With ``clock=None`` (replay) a record without a timestamp inherits the
    previous record's timestamp, keeping replays deterministic.
    """

    def __init__(self, lines: Iterable[bytes], cfg: SourceConfig, clock: Optional[Clock] = None,
                 stats: Optional[ParseStats] = None):
        self.cfg = cfg
        self.clock = clock
        self.stats = stats if stats is not None else ParseStats()
        self.scheduler = WindowScheduler(cfg.window)
        self._parse = make_parser(cfg.format)
        self._lines = iter(lines)
        self._line_no = 0
        self._pending: list[MiniBatch] = []
        self._logical_ts = 0
        self._done = False

    def _default_ts(self) -> int:
        return self.clock() if self.clock is not None else self._logical_ts

    def feed(self, raw: bytes) -> list[MiniBatch]:
        self._line_no += 1
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            self.stats.reject(self._line_no, f"invalid UTF-8 at byte {exc.start}")
            self.scheduler.reject()
            return []
        try:
            if not text.strip():
                raise ParseError("empty line", 0)
            record = self._parse(text, self._default_ts())
            if record is None:
                return []
            out = self.scheduler.push(record)
        except (ParseError, ValueError) as exc:
            self.stats.reject(self._line_no, str(exc))
            self.scheduler.reject()
            return []
        self.stats.lines_ok += 1
        self._logical_ts = record.timestamp
        return out

    def next_batch(self) -> Optional[MiniBatch]:
        while not self._pending:
            if self._done:
                return None
            raw = next(self._lines, None)
            if raw is None:
                self._done = True
                self._pending.extend(self.scheduler.flush())
            else:
                self._pending.extend(self.feed(raw))
        return self._pending.pop(0)

    def tick(self, now: int) -> list[MiniBatch]:
        return self.scheduler.tick(now)

    def __iter__(self) -> Iterator[MiniBatch]:
        while (batch := self.next_batch()) is not None:
            yield batch


def next_batch(reader: BatchReader) -> Optional[MiniBatch]:
    return reader.next_batch()


def read_batches(cfg: SourceConfig, clock: Optional[Clock] = None,
                 stats: Optional[ParseStats] = None) -> Iterator[MiniBatch]:
    stream = open_binary(cfg)
    try:
        yield from BatchReader(iter_lines(stream), cfg, clock, stats)
    finally:
        if stream is not sys.stdin.buffer:
            stream.close()
