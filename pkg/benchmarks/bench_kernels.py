"""Benchmark the compiled oracle-reduction kernel against the numpy fallback.

Both backends expose the same ``oracle_reduce(points, queries, alpha, beta)``
contract; this script times them over a grid of (K target points, n queries)
sizes and cross-checks that their outputs agree.

Run:  python benchmarks/bench_kernels.py
"""
from __future__ import annotations

import time

import numpy as np

from fdslab import _kernels_np

try:
    from fdslab import _kernels as _kernels_ext
except ImportError:
    _kernels_ext = None


def _time(fn, *args, repeats: int = 3) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    rng = np.random.default_rng(0)
    alpha, beta = 0.6, 0.4
    print(f"{'K':>9} {'queries':>8} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    for k, n in [(256, 1_000), (4_096, 1_000), (100_000, 512), (1_000_000, 256)]:
        points = rng.standard_normal((k, 2)) * 1.5
        queries = rng.standard_normal((n, 2)) * 1.5
        repeats = 1 if k * n > 10**8 else 3

        t_np = _time(_kernels_np.oracle_reduce, points, queries, alpha, beta,
                     repeats=repeats)
        if _kernels_ext is None:
            print(f"{k:>9} {n:>8} {t_np:>9.4f}s {'missing':>10} {'-':>8}")
            continue
        t_cy = _time(_kernels_ext.oracle_reduce, points, queries, alpha, beta,
                     repeats=repeats)

        ref = _kernels_np.oracle_reduce(points, queries, alpha, beta)
        out = _kernels_ext.oracle_reduce(points, queries, alpha, beta)
        for a, b in zip(ref, out):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)

        print(f"{k:>9} {n:>8} {t_np:>9.4f}s {t_cy:>9.4f}s {t_np / t_cy:>7.2f}x")
    if _kernels_ext is None:
        print("\ncompiled extension not built (FDSLAB_NO_EXT=1 or build skipped)")
    else:
        print("\noutputs agree within 1e-10 relative on every case")


if __name__ == "__main__":
    main()
