"""Mini-batch feature ranking by mutual information against a binary label.

The sparse path only touches rows where a feature is present, so its cost
follows the number of present entries rather than the batch length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numba
import numpy as np

from drifter.model import MiniBatch

DEFAULT_CONTINGENCY_WIDTH = 256
DEFAULT_INTERACTION_CAP = 100
INTERACTION_SEED = 0x5EED_1A7E


@dataclass(frozen=True)
class SparseColumn:
    """Present entries of one feature over ``n`` rows.

    ``values`` are non-negative integer codes (hashed buckets) aligned with
    ``present_indices``.
    """

    n: int
    present_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.present_indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.int64)
        object.__setattr__(self, "present_indices", idx)
        object.__setattr__(self, "values", vals)
        if self.n < 0:
            raise ValueError("column length must be non-negative")
        if idx.shape != vals.shape or idx.ndim != 1:
            raise ValueError("present_indices and values must be aligned 1-d arrays")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.n:
                raise ValueError("present index out of range")
            if idx.size > 1 and np.any(np.diff(idx) <= 0):
                raise ValueError("present_indices must be strictly increasing")
            if vals.min() < 0:
                raise ValueError("values must be non-negative codes")

    @property
    def density(self) -> float:
        return self.present_indices.size / self.n if self.n else 0.0

    def to_dense(self, missing: int = -1) -> np.ndarray:
        out = np.full(self.n, missing, dtype=np.int64)
        out[self.present_indices] = self.values
        return out

    @classmethod
    def from_dense(cls, x, missing: int = -1) -> "SparseColumn":
        x = np.asarray(x, dtype=np.int64)
        idx = np.flatnonzero(x != missing)
        return cls(x.size, idx, x[idx])


@dataclass
class RankingResult:
    scores: dict = field(default_factory=dict)
    interaction_scores: dict = field(default_factory=dict)
    evaluated_pairs: int = 0


@numba.njit(cache=True)
def _mi_bits(table):
    total = 0
    for i in range(table.shape[0]):
        total += table[i, 0] + table[i, 1]
    if total < 2:
        return 0.0
    ny0 = 0
    ny1 = 0
    nx_distinct = 0
    for i in range(table.shape[0]):
        ny0 += table[i, 0]
        ny1 += table[i, 1]
        if table[i, 0] + table[i, 1] > 0:
            nx_distinct += 1
    if ny0 == 0 or ny1 == 0 or nx_distinct < 2:
        return 0.0
    n = float(total)
    acc = 0.0
    for i in range(table.shape[0]):
        nx = table[i, 0] + table[i, 1]
        if nx == 0:
            continue
        for j in range(2):
            c = table[i, j]
            if c == 0:
                continue
            ny = ny0 if j == 0 else ny1
            acc += c * math.log2(c * n / (nx * ny))
    mi = acc / n
    return mi if mi > 0.0 else 0.0


# Kernels return -1.0 when a label outside {0, 1} is met on a counted row.

@numba.njit(cache=True)
def _mi_sparse_kernel(idx, vals, y, width):
    table = np.zeros((width, 2), dtype=np.int64)
    for k in range(idx.shape[0]):
        label = y[idx[k]]
        if label != 0 and label != 1:
            return -1.0
        table[vals[k], label] += 1
    return _mi_bits(table)


@numba.njit(cache=True)
def _mi_dense_kernel(x, y, width):
    table = np.zeros((width, 2), dtype=np.int64)
    for i in range(x.shape[0]):
        v = x[i]
        if v >= 0:
            label = y[i]
            if label != 0 and label != 1:
                return -1.0
            table[v, label] += 1
    return _mi_bits(table)


def _as_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.size != n:
        raise ValueError(f"label column length {y.size} does not match column length {n}")
    if y.dtype.kind not in "iub":
        raise ValueError("labels must be an integer array")
    return y.view(np.int8) if y.dtype == np.bool_ else y


def _checked(mi: float) -> float:
    if mi < 0.0:
        raise ValueError("labels must be binary 0/1")
    return float(mi)


def mutual_information_sparse(x: SparseColumn, y) -> float:
    """MI(X;Y) in bits over the rows where X is present."""
    if x.n < 1:
        raise ValueError("column must have at least one row")
    y = _as_labels(y, x.n)
    if x.values.size < 2:
        return 0.0
    width = int(x.values.max()) + 1
    return _checked(_mi_sparse_kernel(x.present_indices, x.values, y, width))


def mutual_information_dense(x, y, missing: int = -1) -> float:
    """Reference path: scans every row, skipping the ``missing`` marker."""
    x = np.asarray(x, dtype=np.int64)
    if x.size < 1:
        raise ValueError("column must have at least one row")
    y = _as_labels(y, x.size)
    if missing != -1:
        x = np.where(x == missing, -1, x)
    width = int(x.max()) + 1
    if width <= 0:
        return 0.0
    return _checked(_mi_dense_kernel(x, y, width))


@numba.njit(cache=True)
def _reduce_codes(values, width, seed):
    out = np.empty(values.shape[0], dtype=np.int64)
    s = np.uint64(seed)
    w = np.uint64(width)
    for i in range(values.shape[0]):
        h = np.uint64(values[i]) ^ s
        h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        h = h ^ (h >> np.uint64(31))
        out[i] = np.int64(h % w)
    return out


@numba.njit(cache=True)
def _combine_codes(a, b, seed, bucket_count):
    out = np.empty(a.shape[0], dtype=np.int64)
    m = np.uint64(bucket_count)
    for i in range(a.shape[0]):
        h = np.uint64(a[i]) * np.uint64(0x9E3779B97F4A7C15) ^ np.uint64(b[i]) ^ np.uint64(seed)
        h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        h = h ^ (h >> np.uint64(31))
        out[i] = np.int64(h % m)
    return out


def reduce_width(col: SparseColumn, width: int = DEFAULT_CONTINGENCY_WIDTH, seed: int = 0) -> SparseColumn:
    """Re-hash bucket ids into ``[0, width)`` to bound the contingency table."""
    return SparseColumn(col.n, col.present_indices, _reduce_codes(col.values, width, seed & (2**64 - 1)))


def combine_columns(a: SparseColumn, b: SparseColumn, bucket_count: int,
                    seed: int = INTERACTION_SEED) -> SparseColumn:
    """Row-wise interaction column, present where both inputs are present."""
    if a.n != b.n:
        raise ValueError("columns differ in length")
    rows, ia, ib = np.intersect1d(a.present_indices, b.present_indices,
                                  assume_unique=True, return_indices=True)
    vals = _combine_codes(a.values[ia], b.values[ib], seed & (2**64 - 1), bucket_count)
    return SparseColumn(a.n, rows, vals)


def pair_count(f: int) -> int:
    return f * (f - 1) // 2


def sample_pairs(f: int, cap: int, seed: int) -> list[tuple[int, int]]:
    """Up to ``cap`` distinct unordered index pairs, uniform without replacement."""
    if cap < 0:
        raise ValueError("interaction cap must be >= 0")
    total = pair_count(f)
    if total == 0 or cap == 0:
        return []
    if cap >= total:
        ks = np.arange(total, dtype=np.int64)
    else:
        rng = np.random.default_rng(seed & (2**64 - 1))
        ks = np.sort(rng.choice(total, size=cap, replace=False))
    i_idx = np.arange(f - 1, dtype=np.int64)
    row_start = i_idx * f - i_idx * (i_idx + 1) // 2
    i = np.searchsorted(row_start, ks, side="right") - 1
    j = ks - row_start[i] + i + 1
    return list(zip(i.tolist(), j.tolist()))


def batch_labels(batch: MiniBatch) -> np.ndarray:
    """Label column with -1 marking unlabeled rows."""
    return np.array([-1 if r.label is None else r.label for r in batch.records], dtype=np.int8)


def _restrict_rows(col: SparseColumn, keep: np.ndarray, new_pos: np.ndarray, n_new: int) -> SparseColumn:
    sel = keep[col.present_indices]
    return SparseColumn(n_new, new_pos[col.present_indices[sel]], col.values[sel])


def rank_batch(batch: MiniBatch, columns: Mapping[str, SparseColumn], cap: int = DEFAULT_INTERACTION_CAP,
               seed: int = 0, *, width: int = DEFAULT_CONTINGENCY_WIDTH,
               bucket_count: int = 1 << 20, labels: Optional[np.ndarray] = None) -> RankingResult:
    """Score every feature and at most ``cap`` sampled feature pairs."""
    if cap < 0:
        raise ValueError("interaction cap must be >= 0")
    y = batch_labels(batch) if labels is None else np.asarray(labels, dtype=np.int8)
    n = len(batch.records)
    keep = y >= 0
    n_labeled = int(keep.sum())
    if n_labeled == 0:
        raise ValueError("unlabeled batch")
    for name, col in columns.items():
        if col.n != n:
            raise ValueError(f"column {name!r} has length {col.n}, batch has {n} records")

    names = sorted(columns)
    if n_labeled < n:
        new_pos = np.cumsum(keep) - 1
        cols = [_restrict_rows(columns[nm], keep, new_pos, n_labeled) for nm in names]
        y = y[keep]
    else:
        cols = [columns[nm] for nm in names]

    # small bucket ranges already fit the table; re-hashing would only add collisions
    shrink = (lambda c: reduce_width(c, width)) if bucket_count > width else (lambda c: c)

    result = RankingResult()
    for nm, col in zip(names, cols):
        result.scores[nm] = mutual_information_sparse(shrink(col), y)

    for i, j in sample_pairs(len(names), cap, seed):
        combo = combine_columns(cols[i], cols[j], bucket_count)
        result.interaction_scores[(names[i], names[j])] = mutual_information_sparse(shrink(combo), y)
        result.evaluated_pairs += 1
    return result
