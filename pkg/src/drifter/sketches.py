"""Streaming per-feature statistics: HyperLogLog, moments, histogram, profile."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numba
import numpy as np
import xxhash

from drifter.model import FeatureValue, hash64

DEFAULT_PRECISION = 12
DEFAULT_MAX_BINS = 64
DEFAULT_QUANTILES = (0.25, 0.5, 0.75, 0.95, 0.99)


@numba.njit(cache=True, inline="always")
def _mix64(x):
    # splitmix64 finalizer; bijective on uint64
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@numba.njit(cache=True)
def _hll_add_many(registers, hashes, p):
    width = np.uint64(64 - p)
    cap = 64 - p + 1
    for i in range(hashes.shape[0]):
        h = _mix64(np.uint64(hashes[i]))
        idx = h >> width
        w = h << np.uint64(p)
        rank = 1
        while rank < cap and (w & np.uint64(0x8000000000000000)) == 0:
            w = w << np.uint64(1)
            rank += 1
        if registers[idx] < rank:
            registers[idx] = rank


ALPHA_INF = 1.0 / (2.0 * math.log(2.0))


def _sigma(x: float) -> float:
    # x + sum_k x^(2^k) 2^(k-1): the empty-register term, equal to linear counting as n -> 0
    if x == 1.0:
        return math.inf
    y, z = 1.0, x
    while True:
        x *= x
        prev = z
        z += x * y
        y += y
        if z == prev:
            return z


def _tau(x: float) -> float:
    # saturated-register term; negligible with 64-bit hashes but kept for completeness
    if x == 0.0 or x == 1.0:
        return 0.0
    y, z = 1.0, 1.0 - x
    while True:
        x = math.sqrt(x)
        prev = z
        y *= 0.5
        z -= (1.0 - x) ** 2 * y
        if z == prev:
            return z / 3.0


class HllSketch:
    """HyperLogLog distinct counter with ``2**p`` registers.

    Items are 64-bit hashes (ints) or raw bytes/str; ints are re-mixed so
    that small bucket ids spread over all registers.
    """

    __slots__ = ("p", "registers")

    def __init__(self, p: int = DEFAULT_PRECISION, registers: Optional[np.ndarray] = None):
        if not 4 <= p <= 16:
            raise ValueError(f"precision must be in [4, 16], got {p}")
        self.p = p
        if registers is None:
            self.registers = np.zeros(1 << p, dtype=np.uint8)
        else:
            registers = np.asarray(registers, dtype=np.uint8)
            if registers.shape != (1 << p,):
                raise ValueError("register array does not match precision")
            self.registers = registers.copy()

    @property
    def m(self) -> int:
        return 1 << self.p

    def add(self, item) -> "HllSketch":
        if isinstance(item, str):
            item = item.encode("utf-8")
        if isinstance(item, (bytes, bytearray)):
            h = xxhash.xxh64_intdigest(bytes(item))
        else:
            h = int(item) & 0xFFFFFFFFFFFFFFFF
        _hll_add_many(self.registers, np.array([h], dtype=np.uint64), self.p)
        return self

    def add_hashes(self, hashes: np.ndarray) -> "HllSketch":
        if len(hashes):
            _hll_add_many(self.registers, np.asarray(hashes, dtype=np.uint64), self.p)
        return self

    def estimate(self) -> float:
        regs = self.registers
        zeros = int(np.count_nonzero(regs == 0))
        m = self.m
        if zeros == m:
            return 0.0
        # Ertl's improved estimator: no bias tables and no branch switch. The
        # classic raw/linear-counting switch at 2.5m is biased by about +2.4%
        # right where it hands over to the raw estimate.
        q = 64 - self.p
        counts = np.bincount(regs, minlength=q + 2)
        z = m * _tau(1.0 - counts[q + 1] / m)
        for k in range(q, 0, -1):
            z = 0.5 * (z + counts[k])
        z += m * _sigma(counts[0] / m)
        return ALPHA_INF * m * m / z

    def merge(self, other: "HllSketch") -> "HllSketch":
        """Return a new sketch holding the register-wise maximum."""
        if self.p != other.p:
            raise ValueError(f"precision mismatch: {self.p} != {other.p}")
        return HllSketch(self.p, np.maximum(self.registers, other.registers))

    def copy(self) -> "HllSketch":
        return HllSketch(self.p, self.registers)

    def __eq__(self, other):
        return (isinstance(other, HllSketch) and self.p == other.p
                and np.array_equal(self.registers, other.registers))

    def __repr__(self):
        return f"HllSketch(p={self.p}, estimate={self.estimate():.1f})"


def hll_insert(sketch: HllSketch, item) -> HllSketch:
    return sketch.add(item)


def hll_estimate(sketch: HllSketch) -> float:
    return sketch.estimate()


def hll_merge(a: HllSketch, b: HllSketch) -> HllSketch:
    return a.merge(b)


@dataclass
class StreamingMoments:
    """Welford running mean and sum of squared deviations."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, x: float) -> "StreamingMoments":
        if not math.isfinite(x):
            raise ValueError(f"non-finite value {x!r}")
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)
        if self.m2 < 0.0:
            self.m2 = 0.0
        return self

    def update_many(self, xs: np.ndarray) -> "StreamingMoments":
        """Fold a batch in with the pairwise (Chan et al.) combination."""
        xs = np.asarray(xs, dtype=np.float64)
        if xs.size == 0:
            return self
        if not np.all(np.isfinite(xs)):
            raise ValueError("non-finite value in batch")
        other_mean = float(xs.mean())
        other = StreamingMoments(int(xs.size), other_mean, float(np.sum((xs - other_mean) ** 2)))
        return self.merge(other)

    def merge(self, other: "StreamingMoments") -> "StreamingMoments":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / n
        self.m2 += other.m2 + delta * delta * self.count * other.count / n
        self.count = n
        return self

    @property
    def variance(self) -> float:
        # population convention
        return self.m2 / self.count if self.count else 0.0

    def stddev(self) -> float:
        return math.sqrt(self.variance)


def moments_update(m: StreamingMoments, x: float) -> StreamingMoments:
    return m.update(x)


@numba.njit(cache=True)
def _hist_add_many(centroids, counts, nbins, max_bins, values):
    for k in range(values.shape[0]):
        x = values[k]
        lo = 0
        hi = nbins
        while lo < hi:
            mid = (lo + hi) >> 1
            if centroids[mid] < x:
                lo = mid + 1
            else:
                hi = mid
        if lo < nbins and centroids[lo] == x:
            counts[lo] += 1
            continue
        for j in range(nbins, lo, -1):
            centroids[j] = centroids[j - 1]
            counts[j] = counts[j - 1]
        centroids[lo] = x
        counts[lo] = 1
        nbins += 1
        if nbins > max_bins:
            best = 0
            gap = centroids[1] - centroids[0]
            for j in range(1, nbins - 1):
                g = centroids[j + 1] - centroids[j]
                if g < gap:
                    gap = g
                    best = j
            c = counts[best] + counts[best + 1]
            centroids[best] = (centroids[best] * counts[best]
                               + centroids[best + 1] * counts[best + 1]) / c
            counts[best] = c
            for j in range(best + 1, nbins - 1):
                centroids[j] = centroids[j + 1]
                counts[j] = counts[j + 1]
            nbins -= 1
    return nbins


class StreamingHistogram:
    """Bounded centroid histogram; the two closest centroids merge on overflow."""

    def __init__(self, max_bins: int = DEFAULT_MAX_BINS):
        if max_bins < 2:
            raise ValueError("max_bins must be >= 2")
        self.max_bins = max_bins
        self._centroids = np.zeros(max_bins + 1, dtype=np.float64)
        self._counts = np.zeros(max_bins + 1, dtype=np.int64)
        self._n = 0

    @property
    def bins(self) -> list[tuple[float, int]]:
        return [(float(c), int(k)) for c, k in zip(self._centroids[: self._n], self._counts[: self._n])]

    @property
    def total(self) -> int:
        return int(self._counts[: self._n].sum())

    def __len__(self):
        return self._n

    def update(self, x: float) -> "StreamingHistogram":
        return self.update_many(np.array([x], dtype=np.float64))

    def update_many(self, xs) -> "StreamingHistogram":
        xs = np.asarray(xs, dtype=np.float64)
        if xs.size == 0:
            return self
        if not np.all(np.isfinite(xs)):
            raise ValueError("non-finite value")
        self._n = _hist_add_many(self._centroids, self._counts, self._n, self.max_bins, xs)
        return self

    def quantile(self, q: float) -> float:
        if self._n == 0:
            raise ValueError("quantile of empty histogram")
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"q must be in [0, 1], got {q}")
        cs = self._centroids[: self._n]
        ks = self._counts[: self._n].astype(np.float64)
        if self._n == 1:
            return float(cs[0])
        if q == 0.0:
            return float(cs[0])
        if q == 1.0:
            return float(cs[-1])
        # each centroid sits at the middle of its own mass
        pos = (np.cumsum(ks) - ks / 2.0) / ks.sum()
        return float(np.interp(q, pos, cs))

    def copy(self) -> "StreamingHistogram":
        h = StreamingHistogram(self.max_bins)
        h._centroids[:] = self._centroids
        h._counts[:] = self._counts
        h._n = self._n
        return h


def histogram_update(h: StreamingHistogram, x: float) -> StreamingHistogram:
    return h.update(x)


def histogram_quantile(h: StreamingHistogram, q: float) -> float:
    return h.quantile(q)


@dataclass
class FeatureProfile:
    """Windowed state of one feature."""

    name: str
    precision: int = DEFAULT_PRECISION
    max_bins: int = DEFAULT_MAX_BINS
    present_count: int = 0
    window_total: int = 0
    hll: HllSketch = field(default=None)
    histogram: Optional[StreamingHistogram] = None
    moments: StreamingMoments = field(default_factory=StreamingMoments)
    relevance: Optional[float] = None

    def __post_init__(self):
        if self.hll is None:
            self.hll = HllSketch(self.precision)

    @property
    def coverage(self) -> float:
        return self.present_count / self.window_total if self.window_total else 0.0

    @property
    def cardinality(self) -> float:
        return self.hll.estimate()

    @property
    def is_numeric(self) -> bool:
        return self.histogram is not None and len(self.histogram) > 0

    def update(self, value: Optional[FeatureValue]) -> "FeatureProfile":
        self.window_total += 1
        if value is None:
            return self
        self.present_count += 1
        self.hll.add(hash64(self.name, value))
        if not isinstance(value, str):
            self._numeric().update(float(value))
            self.moments.update(float(value))
        return self

    def update_column(self, n_rows: int, hashes: np.ndarray,
                      numeric: Optional[np.ndarray] = None) -> "FeatureProfile":
        """Bulk form of ``update``: ``n_rows`` records, ``len(hashes)`` of them present.

        ``hashes`` are ``hash64`` values of the present entries; ``numeric``
        holds the numeric subset in arrival order.
        """
        if len(hashes) > n_rows:
            raise ValueError("more present values than rows")
        self.window_total += n_rows
        self.present_count += len(hashes)
        self.hll.add_hashes(hashes)
        if numeric is not None and len(numeric):
            self._numeric().update_many(numeric)
            self.moments.update_many(numeric)
        return self

    def _numeric(self) -> StreamingHistogram:
        if self.histogram is None:
            self.histogram = StreamingHistogram(self.max_bins)
        return self.histogram

    def quantiles(self, qs: Sequence[float] = DEFAULT_QUANTILES) -> dict[float, float]:
        if not self.is_numeric:
            return {}
        return {q: self.histogram.quantile(q) for q in qs}

    def freeze(self, qs: Sequence[float] = DEFAULT_QUANTILES) -> "ProfileSnapshot":
        return ProfileSnapshot(
            name=self.name,
            present_count=self.present_count,
            window_total=self.window_total,
            coverage=self.coverage,
            cardinality=self.cardinality,
            numeric=self.is_numeric,
            stddev=self.moments.stddev() if self.moments.count else None,
            mean=self.moments.mean if self.moments.count else None,
            histogram=tuple(self.histogram.bins) if self.histogram is not None else (),
            quantiles=tuple(sorted(self.quantiles(qs).items())),
            relevance=self.relevance,
        )


@dataclass(frozen=True)
class ProfileSnapshot:
    """Immutable read-only view of a completed window's profile."""

    name: str
    present_count: int
    window_total: int
    coverage: float
    cardinality: float
    numeric: bool
    stddev: Optional[float]
    mean: Optional[float]
    histogram: tuple
    quantiles: tuple
    relevance: Optional[float]

    def quantile_map(self) -> dict[float, float]:
        return dict(self.quantiles)


def profile_update(p: FeatureProfile, value: Optional[FeatureValue]) -> FeatureProfile:
    return p.update(value)


def profile_from_values(name: str, values: Iterable[Optional[FeatureValue]], **kw) -> FeatureProfile:
    p = FeatureProfile(name, **kw)
    for v in values:
        p.update(v)
    return p
