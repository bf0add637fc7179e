"""Synthetic record streams for benchmarks, fixtures and demos."""
from __future__ import annotations

import gzip
import json
from typing import Iterator, Optional, Sequence, TextIO

import numpy as np


def mixed_stream(n_records: int, n_features: int = 100, density: float = 0.3, seed: int = 0,
                 start_ts: int = 0, step_ms: int = 1, numeric_every: int = 2,
                 arity: int = 50, fmt: str = "jsonl") -> Iterator[str]:
    """Labeled records; every ``numeric_every``-th feature is numeric, the rest categorical.

    Per-feature densities are drawn around ``density`` and average to it.
    ``fmt="vw"`` writes categoricals the VW way, as one flag per value
    inside a namespace named after the feature (``fNNN^vK``).
    """
    if fmt not in ("jsonl", "vw"):
        raise ValueError(f"unknown format {fmt!r}")
    rng = np.random.default_rng(seed)
    dens = np.clip(rng.uniform(0.5 * density, 1.5 * density, n_features), 0.0, 1.0)
    names = [f"f{j:03d}" for j in range(n_features)]
    numeric = [j % numeric_every == 0 for j in range(n_features)]
    chunk = 10_000
    for base in range(0, n_records, chunk):
        m = min(chunk, n_records - base)
        present = rng.random((m, n_features)) < dens
        cats = rng.integers(0, arity, (m, n_features))
        nums = np.round(rng.normal(0.0, 1.0, (m, n_features)), 4)
        labels = rng.integers(0, 2, m)
        for i in range(m):
            ts = start_ts + (base + i) * step_ms
            cols = np.flatnonzero(present[i])
            if fmt == "jsonl":
                feats = {names[j]: (float(nums[i, j]) if numeric[j] else f"v{cats[i, j]}") for j in cols}
                yield json.dumps({"label": int(labels[i]), "ts": ts, "features": feats}) + "\n"
            else:
                plain = [f"{names[j]}:{nums[i, j]:g}" for j in cols if numeric[j]]
                spaces = "".join(f" |{names[j]} v{cats[i, j]}" for j in cols if not numeric[j])
                yield f"{1 if labels[i] else -1} | ts:{ts} {' '.join(plain)}{spaces}\n"


def coverage_drift_stream(windows: int = 20, per_window: int = 100, window_ms: int = 60_000,
                          base_coverage: float = 0.9, drop_coverage: float = 0.4,
                          drop: Sequence[int] = (12, 13, 14), feature: str = "adv_id",
                          seed: int = 0) -> Iterator[str]:
    """VW stream where ``feature`` has ``base_coverage`` except in the ``drop`` windows.

    Coverage is exact per window: the first ``round(c * per_window)`` records
    carry the feature. An always-present ``hour`` feature keeps windows non-empty.
    """
    rng = np.random.default_rng(seed)
    dropped = set(drop)
    step = window_ms // per_window
    for w in range(windows):
        k = round((drop_coverage if w in dropped else base_coverage) * per_window)
        for i in range(per_window):
            label = int(rng.integers(0, 2))
            toks = [f"ts:{w * window_ms + i * step}", f"hour:{i % 24}"]
            if i < k:
                toks.append(feature)
            yield f"{1 if label else -1} | {' '.join(toks)}\n"


def write_stream(lines: Iterator[str], path: str, compress: Optional[bool] = None) -> None:
    compress = path.endswith(".gz") if compress is None else compress
    fh: TextIO = gzip.open(path, "wt", encoding="utf-8") if compress else open(path, "w", encoding="utf-8")
    with fh:
        fh.writelines(lines)
