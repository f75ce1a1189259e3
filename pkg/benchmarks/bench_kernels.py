"""Time the numba and numpy variants of each ERM kernel on the same inputs.

Usage: python3 benchmarks/bench_kernels.py [--sizes 1000,10000,100000] [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from dg_risklab import kernels


def _inputs(n, rng):
    cell = rng.integers(0, 64, n)
    label = rng.integers(0, 3, n)
    weight = rng.random(n)
    w1, w2, wo = rng.random(n), rng.random(n), rng.random(n) * 0.1
    counts = rng.random((n, 3))
    bin_start = np.linspace(0, n, 33).astype(np.int64)
    return {
        "weighted_counts": ((cell, label, weight, 64, 3), kernels.weighted_counts_np,
                            kernels.weighted_counts_nb),
        "threshold_scan": ((w1, w2, wo), kernels.threshold_scan_np, kernels.threshold_scan_nb),
        "stump_scan": ((counts, bin_start), kernels.stump_scan_np, kernels.stump_scan_nb),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--sizes", default="1000,10000,100000")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {kernels.HAVE_NUMBA}; active backend: {kernels.BACKEND}")
    print(f"{'kernel':16s} {'n':>8s} {'numpy ms':>10s} {'numba ms':>10s} {'ratio':>7s}")
    for n in (int(s) for s in args.sizes.split(",")):
        for name, (a, f_np, f_nb) in _inputs(n, rng).items():
            f_nb(*a)  # compile outside the timed region
            t_np = min(timeit.repeat(lambda: f_np(*a), number=1, repeat=args.repeat)) * 1e3
            t_nb = min(timeit.repeat(lambda: f_nb(*a), number=1, repeat=args.repeat)) * 1e3
            print(f"{name:16s} {n:8d} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:7.1f}")


if __name__ == "__main__":
    main()
