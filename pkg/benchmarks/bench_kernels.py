"""Benchmark the compiled run-length kernels against the NumPy fallback.

Times the three kernel entry points on synthetic workloads shaped like the
batch-scoring hot path (many small mask sets) plus a large-grid case.

    python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from capdet.masks import _kernels_py, rle_encode

try:
    from capdet.masks import _kernels as _kernels_ext
except ImportError:
    _kernels_ext = None


def make_workload(n_sets: int, max_masks: int, side: int, seed: int):
    rng = np.random.default_rng(seed)
    sets = []
    for _ in range(n_sets):
        n = int(rng.integers(1, max_masks + 1))
        masks = []
        for _ in range(n):
            density = float(rng.random())
            masks.append(rle_encode(rng.random((side, side)) < density).counts)
        sets.append((masks, side * side))
    return sets


def time_union(kernels, sets, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        for masks, _ in sets:
            kernels.union_area_runs(masks)
        best = min(best, time.perf_counter() - start)
    return best


def time_decode(kernels, sets, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        for masks, n_px in sets:
            for counts in masks:
                kernels.decode_runs(counts, n_px)
        best = min(best, time.perf_counter() - start)
    return best


def time_encode(kernels, flats, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        for flat in flats:
            kernels.encode_runs(flat)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    if _kernels_ext is None:
        print("compiled kernels are not available; only timing the fallback")

    workloads = [
        ("small grids (64x64, 5k sets)", make_workload(5000, 6, 64, 1)),
        ("large grids (512x512, 200 sets)", make_workload(200, 6, 512, 2)),
    ]
    rng = np.random.default_rng(3)
    flats = [
        np.ascontiguousarray((rng.random(4096) < rng.random()).astype(np.uint8))
        for _ in range(5000)
    ]

    backends = [("python", _kernels_py)]
    if _kernels_ext is not None:
        backends.append(("compiled", _kernels_ext))

    print(f"{'operation':<42} " + " ".join(f"{name:>10}" for name, _ in backends) + f" {'speedup':>9}")
    for label, sets in workloads:
        times = [time_union(k, sets, args.repeat) for _, k in backends]
        speedup = times[0] / times[-1] if len(times) > 1 else 1.0
        row = " ".join(f"{t * 1000:>9.1f}ms" for t in times)
        print(f"{'union_area ' + label:<42} {row} {speedup:>8.1f}x")

    times = [time_decode(k, workloads[0][1], args.repeat) for _, k in backends]
    row = " ".join(f"{t * 1000:>9.1f}ms" for t in times)
    print(f"{'decode small grids':<42} {row} {times[0] / times[-1]:>8.1f}x")

    times = [time_encode(k, flats, args.repeat) for _, k in backends]
    row = " ".join(f"{t * 1000:>9.1f}ms" for t in times)
    print(f"{'encode 4096-pixel bitmaps':<42} {row} {times[0] / times[-1]:>8.1f}x")


if __name__ == "__main__":
    main()
