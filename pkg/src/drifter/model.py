"""Core record types and the feature-hashing trick."""
from __future__ import annotations

import functools
import json
import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import xxhash

FeatureValue = Union[str, float]
"""A present feature value: categorical token (str) or finite float.

Missingness is never stored as a value; an absent key means missing.
"""

DEFAULT_BUCKET_COUNT = 1 << 20
FIELD_SEPARATOR = b"\x1f"
_U64 = (1 << 64) - 1


class ParseError(ValueError):
    """Raised for malformed input text; carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


_WHITESPACE = re.compile(r"\s")


@functools.lru_cache(maxsize=1 << 16)
def valid_feature_name(name: str) -> bool:
    """Non-empty and free of whitespace; cached since names repeat on every record."""
    return bool(name) and _WHITESPACE.search(name) is None


def render_value(value: FeatureValue) -> str:
    """Canonical text form of a value as fed to the hash.

    Numbers use the shortest round-trip decimal, and integral floats drop
    the fractional part so ``1.0``, ``1`` and the token ``"1"`` collide.
    """
    if isinstance(value, str):
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"unsupported feature value type: {type(value).__name__}")
    x = float(value)
    if not math.isfinite(x):
        raise ValueError(f"non-finite numeric value: {x!r}")
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


def hash64(name: str, value: FeatureValue, seed: int = 0) -> int:
    """Stable 64-bit hash of ``name 0x1F rendered-value``."""
    payload = name.encode("utf-8") + FIELD_SEPARATOR + render_value(value).encode("utf-8")
    return xxhash.xxh64_intdigest(payload, seed & _U64)


def hash_feature(name: str, value: Optional[FeatureValue], bucket_count: int = DEFAULT_BUCKET_COUNT,
                 seed: int = 0) -> int:
    """Clip a (name, value) pair into ``[0, bucket_count)``."""
    if bucket_count < 2:
        raise ValueError(f"bucket_count must be >= 2, got {bucket_count}")
    if value is None:
        raise ValueError("cannot hash a missing value")
    return hash64(name, value, seed) % bucket_count


def parse_feature_name(raw: str) -> str:
    name = raw.strip()
    if not name:
        raise ParseError("empty feature name", 0)
    for i, ch in enumerate(name):
        if ch.isspace():
            offset = len(raw[: raw.index(name) + i].encode("utf-8"))
            raise ParseError("whitespace inside feature name", offset)
    return name


@dataclass(frozen=True)
class Record:
    """One sparse observation.

    ``features`` maps name to value; a missing feature is simply absent.
    ``label`` is 0, 1 or None; ``timestamp`` is epoch milliseconds (UTC).
    """

    features: Mapping[str, FeatureValue]
    label: Optional[int] = None
    timestamp: int = 0

    def __post_init__(self):
        if self.label not in (None, 0, 1):
            raise ValueError(f"label must be 0, 1 or None, got {self.label!r}")
        for name, value in self.features.items():
            if not valid_feature_name(name):
                raise ValueError(f"invalid feature name {name!r}")
            if value is None:
                raise ValueError(f"feature {name!r}: missing values must be omitted, not stored")
            if not isinstance(value, str) and not math.isfinite(value):
                raise ValueError(f"feature {name!r}: non-finite value {value!r}")

    def to_debug(self) -> str:
        """Single-line JSON debug form; floats stay floats, tokens stay strings."""
        feats = {k: (v if isinstance(v, str) else float(v)) for k, v in self.features.items()}
        return json.dumps({"label": self.label, "ts": self.timestamp, "features": feats},
                          sort_keys=True, allow_nan=False)

    @classmethod
    def from_debug(cls, text: str) -> "Record":
        obj = json.loads(text)
        feats = {k: (v if isinstance(v, str) else float(v)) for k, v in obj["features"].items()}
        return cls(features=feats, label=obj["label"], timestamp=int(obj["ts"]))


@dataclass(frozen=True)
class MiniBatch:
    records: Sequence[Record]
    window_id: int
    window_start: int
    window_end: int
    rejected: int = 0

    def __post_init__(self):
        if self.window_end <= self.window_start:
            raise ValueError("window_end must be after window_start")
        for r in self.records:
            if not (self.window_start <= r.timestamp < self.window_end):
                raise ValueError(
                    f"record timestamp {r.timestamp} outside window "
                    f"[{self.window_start}, {self.window_end})")

    def __len__(self):
        return len(self.records)

    @property
    def labeled_count(self) -> int:
        return sum(1 for r in self.records if r.label is not None)


@dataclass
class ParseStats:
    lines_ok: int = 0
    lines_rejected: int = 0
    first_error: Optional[tuple] = field(default=None)

    @property
    def lines_seen(self) -> int:
        return self.lines_ok + self.lines_rejected

    def reject(self, line_no: int, message: str) -> None:
        self.lines_rejected += 1
        if self.first_error is None:
            self.first_error = (line_no, message)
