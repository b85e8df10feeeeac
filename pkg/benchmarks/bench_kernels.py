"""Compare the numba and pure-numpy kernel paths.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is checked for agreement before timing; numba variants are
called once first so compilation is excluded.
"""
import argparse
import time

import numpy as np

from rotprune import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(rng):
    a, b = rng.standard_normal((64, 96)), rng.standard_normal((96, 48))
    x = rng.standard_normal((512, 2048))
    w = rng.standard_normal((512, 512))
    y2, z2 = rng.standard_normal((2, 50)), rng.standard_normal((2, 50))
    angles = np.arange(0.0, 2 * np.pi, 1e-4)
    return [
        ("naive_matmul 64x96x48", _kernels.naive_matmul_numba, _kernels.naive_matmul_numpy, (a, b)),
        ("row_stats 512x2048", _kernels.row_stats_numba, _kernels.row_stats_numpy, (x, 0)),
        ("col_norms 512x512", _kernels.col_norms_numba, _kernels.col_norms_numpy, (w,)),
        ("orth2_scan N=50, 62832 angles x2", _kernels.orth2_scan_numba, _kernels.orth2_scan_numpy, (y2, z2, angles, True)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<36}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, fast, slow, inputs in cases(rng):
        ref, got = slow(*inputs), fast(*inputs)
        for r, g in zip(ref if isinstance(ref, tuple) else (ref,), got if isinstance(got, tuple) else (got,)):
            np.testing.assert_allclose(g, r, rtol=1e-9, atol=1e-9)
        t_fast = best_of(lambda: fast(*inputs), args.repeat)
        t_slow = best_of(lambda: slow(*inputs), args.repeat)
        print(f"{name:<36}{t_fast * 1e3:>12.3f}{t_slow * 1e3:>12.3f}{t_slow / t_fast:>9.1f}x")


if __name__ == "__main__":
    main()
