"""Compare the numba and numpy kernels on representative problem sizes.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The numba entries are timed after one warm-up call, so compile time is
reported separately.
"""

import argparse
import time

import numpy as np

from distlq import kernels


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def rk4_case(n, steps, rng):
    L = rng.standard_normal((steps + 1, n, n)) * 0.3
    R = np.ascontiguousarray(np.swapaxes(L, 1, 2))
    F = rng.standard_normal((steps + 1, n, n))
    X0 = np.zeros((n, n))
    h = 1.0 / steps
    return (L, R, F, X0, h, True)


def consensus_case(N, D, rng):
    X = rng.standard_normal((N, D))
    G = rng.standard_normal((N, D))
    indptr = np.arange(0, 2 * N + 1, 2, dtype=np.int64)
    indices = np.array([[(i - 1) % N, (i + 1) % N] for i in range(N)], dtype=np.int64).ravel()
    return (X, G, 0.1, 0.4, indptr, indices)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    cases = [
        ("rk4 n=2 steps=2000", kernels.rk4_linear_numpy, kernels.rk4_linear_jit, rk4_case(2, 2000, rng)),
        ("rk4 n=6 steps=2000", kernels.rk4_linear_numpy, kernels.rk4_linear_jit, rk4_case(6, 2000, rng)),
        ("round N=4 D=2001*4", kernels.consensus_round_numpy, kernels.consensus_round_jit,
         consensus_case(4, 2001 * 4, rng)),
        ("round N=5 D=400", kernels.consensus_round_numpy, kernels.consensus_round_jit,
         consensus_case(5, 400, rng)),
    ]
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'case':<24}{'numpy [ms]':>12}{'numba [ms]':>12}{'compile [s]':>13}{'speedup':>9}")
    for name, f_np, f_jit, a in cases:
        t0 = time.perf_counter()
        ref = f_jit(*a)
        compile_s = time.perf_counter() - t0
        assert np.allclose(ref, f_np(*a), rtol=1e-12, atol=1e-12)
        t_np = best_of(lambda: f_np(*a), args.repeat)
        t_jit = best_of(lambda: f_jit(*a), args.repeat)
        print(f"{name:<24}{1e3 * t_np:>12.3f}{1e3 * t_jit:>12.3f}{compile_s:>13.2f}{t_np / t_jit:>9.1f}")


if __name__ == "__main__":
    main()
