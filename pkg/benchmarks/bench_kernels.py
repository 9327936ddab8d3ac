"""Compare the numba-jitted kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--pairs 2000] [--boxes 20000]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from veraser import kernels


def random_boxes(rng, n, hi=64.0):
    x1 = rng.uniform(0, hi - 1, n)
    y1 = rng.uniform(0, hi - 1, n)
    x2 = x1 + rng.uniform(0.5, hi / 3, n)
    y2 = y1 + rng.uniform(0.5, hi / 3, n)
    return np.stack([x1, y1, x2, y2], axis=1)


def timeit(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=2000)
    parser.add_argument("--boxes", type=int, default=20000)
    args = parser.parse_args()

    if not kernels.NUMBA_ENABLED:
        print("numba path disabled (VERASER_NO_NUMBA set or numba missing);")
        print("only the numpy fallback will be timed.")

    rng = np.random.default_rng(0)
    a = random_boxes(rng, args.pairs)
    b = random_boxes(rng, args.pairs)
    boxes = random_boxes(rng, args.boxes, hi=32.0)

    kernels.warmup()

    rows = []
    t_np = timeit(kernels._iou_matrix_np, a, b)
    rows.append(("iou_matrix", f"{args.pairs}x{args.pairs}", t_np, timeit(kernels.iou_matrix, a, b)))
    t_np = timeit(kernels._white_counts_np, 32, 32, boxes)
    rows.append(("white_counts", f"{args.boxes} boxes @32x32", t_np, timeit(kernels.white_counts, 32, 32, boxes)))
    t_np = timeit(kernels._rasterize_np, 512, 512, 10.5, 20.5, 400.0, 480.0)
    rows.append(("rasterize", "512x512", t_np, timeit(kernels.rasterize, 512, 512, 10.5, 20.5, 400.0, 480.0)))

    print(f"{'kernel':<14} {'workload':<22} {'numpy':>10} {'active':>10} {'speedup':>8}")
    for name, load, numpy_s, active_s in rows:
        speedup = numpy_s / active_s if active_s else float("inf")
        print(f"{name:<14} {load:<22} {numpy_s * 1e3:>8.2f}ms {active_s * 1e3:>8.2f}ms {speedup:>7.1f}x")


if __name__ == "__main__":
    main()
