"""Pure-Python (NumPy) kernels for run-length mask operations.

Selected automatically when the compiled extension is unavailable. Same
contract as ``capdet.masks._kernels``:

- ``decode_runs(counts, n_pixels)`` -> 1-D uint8 array of 0/1 flags in flat
  column-major pixel order
- ``encode_runs(flat)`` -> list of run lengths, leading background run first
- ``union_area_runs(runs_seq)`` -> number of pixels set in at least one mask

Counts must already satisfy the RLE invariants; callers validate.
"""

from __future__ import annotations

import numpy as np


def decode_runs(counts, n_pixels: int):
    values = np.zeros(len(counts), dtype=np.uint8)
    values[1::2] = 1
    return np.repeat(values, np.asarray(counts, dtype=np.int64))


def encode_runs(flat) -> list[int]:
    flat = np.ascontiguousarray(flat, dtype=np.uint8)
    n = flat.shape[0]
    if n == 0:
        return [0]
    changes = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.empty(changes.size + 2, dtype=np.int64)
    bounds[0] = 0
    bounds[1:-1] = changes
    bounds[-1] = n
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def union_area_runs(runs_seq) -> int:
    starts_parts = []
    ends_parts = []
    for counts in runs_seq:
        c = np.asarray(counts, dtype=np.int64)
        n_fg = c.shape[0] // 2
        if n_fg == 0:
            continue
        cum = np.cumsum(c)
        starts_parts.append(cum[0::2][:n_fg])
        ends_parts.append(cum[1::2])
    if not starts_parts:
        return 0
    starts = np.concatenate(starts_parts)
    ends = np.concatenate(ends_parts)

    order = np.argsort(starts, kind="stable")
    s = starts[order]
    e = ends[order]
    # Sweep over intervals sorted by start: each interval contributes the part
    # of [s, e) past the running maximum end seen so far.
    cummax = np.maximum.accumulate(e)
    prev_end = np.empty_like(cummax)
    prev_end[0] = s[0]
    prev_end[1:] = cummax[:-1]
    return int(np.maximum(e - np.maximum(s, prev_end), 0).sum())
