"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Each case is checked for agreement before timing; the first numba call
(compilation) is excluded.
"""

import argparse
import time

import numpy as np

from ctxkd import kernels
from ctxkd._accel import HAS_NUMBA


def _cases(rng):
    a = rng.integers(0, 30, 200)
    b = rng.integers(0, 30, 180)
    s1 = rng.integers(0, 26, 40)
    s2 = rng.integers(0, 26, 44)
    C = rng.random((12, 18)) * 4.0
    a_m, b_m = np.full(12, 1 / 12), np.full(18, 1 / 18)
    K = np.exp(-C / 0.5)
    return {
        "edit_distance 200x180": ("edit_distance", (a, b)),
        "edit_table 200x180": ("edit_table", (a, b)),
        "jaro_counts 40x44": ("jaro_counts", (s1, s2)),
        "sinkhorn_kernel 12x18": ("sinkhorn_kernel", (K, a_m, b_m, 200, 1e-9)),
        "sinkhorn_log 12x18 eps=0.05": ("sinkhorn_log", (C, 0.05, a_m, b_m, 200, 1e-9)),
    }


def _same(x, y):
    if isinstance(x, tuple):
        return all(_same(p, q) for p, q in zip(x, y))
    return np.allclose(x, y, rtol=1e-9, atol=1e-12)


def _time(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    opts = ap.parse_args()
    if not HAS_NUMBA:
        print("numba not installed; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30}{'numpy':>12}{'numba':>12}{'speedup':>9}")
    for label, (name, args) in _cases(rng).items():
        fast = getattr(kernels, name + "_numba")
        slow = getattr(kernels, name + "_numpy")
        if not _same(fast(*args), slow(*args)):
            raise SystemExit(f"{label}: numba and numpy disagree")
        t_np = _time(slow, args, opts.repeat)
        t_nb = _time(fast, args, opts.repeat)
        print(f"{label:<30}{t_np * 1e6:>10.1f}us{t_nb * 1e6:>10.1f}us{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
