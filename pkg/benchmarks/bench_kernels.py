#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-Python fallback.

Times the two hot paths behind the kernel dispatch: the batch codec round
trip and the CART split search.  Run after building the extension:

    python benchmarks/bench_kernels.py [--quick]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ptzkit._kernels import _pykernels

try:
    from ptzkit._kernels import _core
except ImportError:
    _core = None


def timeit(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_roundtrip(n):
    rng = np.random.default_rng(0)
    pan = rng.integers(-999, 1000, n)
    tilt = rng.integers(-999, 1000, n)
    zoom = rng.integers(0, 1000, n)

    def run(impl):
        assert impl.roundtrip_failures(pan, tilt, zoom) == 0

    return run


def bench_counts(n):
    rng = np.random.default_rng(1)
    values = rng.integers(-999, 1000, n)

    def run(impl):
        impl.greedy_magnitude_counts(values)

    return run


def bench_split(n, trials):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(n, 4))
    y = x[:, 0] * 2 + x[:, 2] ** 2 + rng.normal(size=n) * 0.2
    idx = [rng.integers(0, n, n) for _ in range(trials)]

    def run(impl):
        for i in idx:
            impl.best_split(x, y, i, 5)

    return run


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="smaller workloads")
    args = parser.parse_args()

    scale = 10 if args.quick else 1
    cases = [
        ("codec round trip", bench_roundtrip(2_000_000 // scale)),
        ("greedy counts", bench_counts(5_000_000 // scale)),
        # tree-building hits many small nodes, so benchmark that regime
        ("best_split m=200", bench_split(200, 3000 // scale)),
        ("best_split m=2000", bench_split(2000, 300 // scale)),
    ]

    print(f"{'kernel':<18} {'python':>10} {'compiled':>10} {'speedup':>9}")
    for name, runner in cases:
        py = timeit(lambda: runner(_pykernels))
        if _core is not None:
            cc = timeit(lambda: runner(_core))
            print(f"{name:<18} {py:>9.3f}s {cc:>9.3f}s {py / cc:>8.1f}x")
        else:
            print(f"{name:<18} {py:>9.3f}s {'n/a':>10} {'n/a':>9}")
    if _core is None:
        print("\ncompiled core not built; showing fallback only")


if __name__ == "__main__":
    main()
