"""Time the numba shrinkage kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [rows] [n] [repeats]

Shapes default to one evaluation batch of the desk-scale problem
(1000 x 100). The first numba call is excluded (JIT compile / cache load).
"""

import sys
import time

import numpy as np

from unfold_sc import _kernels as k


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(rows=1000, n=100, repeats=50):
    rng = np.random.default_rng(0)
    z = rng.standard_normal((rows, n))
    b = np.abs(rng.standard_normal(rows)) * 0.5
    sel = max(1, n // 15)

    cases = [
        ("soft_threshold", k.soft_threshold_rows_np, k.soft_threshold_rows_nb, (z, b)),
        ("support_select", k.support_select_rows_np, k.support_select_rows_nb, (z, b, sel)),
    ]
    print(f"rows={rows} n={n} repeats={repeats} numba={'yes' if k.HAS_NUMBA else 'no'}")
    for name, f_np, f_nb, args in cases:
        f_nb(*args)  # compile
        for a_np, a_nb in zip(f_np(*args), f_nb(*args)):
            np.testing.assert_array_equal(a_np, a_nb)
        t_np = best_of(lambda: f_np(*args), repeats)
        t_nb = best_of(lambda: f_nb(*args), repeats)
        print(f"{name:15s} numpy {t_np * 1e3:8.3f} ms   numba {t_nb * 1e3:8.3f} ms   speedup {t_np / t_nb:5.2f}x")


if __name__ == "__main__":
    main(*(int(v) for v in sys.argv[1:4]))
