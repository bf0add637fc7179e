"""Density-vs-runtime benchmark of the sparse and dense mutual-information paths."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from drifter.ranking import SparseColumn, mutual_information_dense, mutual_information_sparse

PAPER_DENSITIES = (0.01, 0.05, 0.10, 0.30, 0.50)


@dataclass
class BenchRow:
    density: float
    present: int
    sparse_mean: float
    sparse_min: float
    sparse_median: float
    dense_mean: float
    dense_min: float
    dense_median: float

    @property
    def speedup(self) -> float:
        return self.dense_median / self.sparse_median if self.sparse_median > 0 else float("inf")


def make_instance(n: int, density: float, rng: np.random.Generator, arity: int = 16):
    present = rng.random(n) < density
    dense = np.where(present, rng.integers(0, arity, n), -1).astype(np.int64)
    y = rng.integers(0, 2, n).astype(np.int8)
    return SparseColumn.from_dense(dense), dense, y


def _time(fn, *args) -> float:
    t0 = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t0


def bench_mi(n: int = 1_000_000, densities: Sequence[float] = PAPER_DENSITIES, repeats: int = 10,
             seed: int = 0) -> list[BenchRow]:
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    for d in densities:
        if not 0.0 < d <= 1.0:
            raise ValueError(f"density {d} outside (0, 1]")
    rng = np.random.default_rng(seed)
    rows = []
    for d in densities:
        sparse, dense, y = make_instance(n, d, rng)
        # warm-up compiles/caches both kernels
        mutual_information_sparse(sparse, y)
        mutual_information_dense(dense, y)
        ts, td = [], []
        for _ in range(repeats):
            ts.append(_time(mutual_information_sparse, sparse, y))
            td.append(_time(mutual_information_dense, dense, y))
        rows.append(BenchRow(d, int(sparse.present_indices.size),
                             statistics.fmean(ts), min(ts), statistics.median(ts),
                             statistics.fmean(td), min(td), statistics.median(td)))
    return rows


HEADER = ("density", "present", "sparse_mean_s", "sparse_min_s", "sparse_median_s",
          "dense_mean_s", "dense_min_s", "dense_median_s", "speedup")


def format_table(rows: Sequence[BenchRow], sep: str = ",") -> str:
    lines = [sep.join(HEADER)]
    for r in rows:
        lines.append(sep.join([f"{r.density:g}", str(r.present)] + [
            f"{v:.6g}" for v in (r.sparse_mean, r.sparse_min, r.sparse_median,
                                 r.dense_mean, r.dense_min, r.dense_median, r.speedup)]))
    return "\n".join(lines) + "\n"
