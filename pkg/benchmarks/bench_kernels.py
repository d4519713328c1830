#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the CSR forward and transpose products at graph sizes spanning toy
experiments up to ASSISTments-scale adjacencies, checks both backends agree
bit-for-bit, and prints the speedups.

    python benchmarks/bench_kernels.py [--repeats 7]
"""

import argparse
import time

import numpy as np

from disengcd.kernels import _numba_impl, _numpy_impl

CASES = [
    # (name, n_rows, n_cols, nnz, d)
    ("toy        ", 200, 100, 6_000, 10),
    ("mid        ", 2_000, 1_500, 120_000, 61),
    ("assist-like", 4_163, 17_746, 278_868, 123),
]


def make_csr(rng, n_rows, n_cols, nnz):
    keys = rng.choice(n_rows * n_cols, size=nnz, replace=False)
    rows, cols = np.divmod(np.sort(keys), n_cols)
    data = rng.random(nnz)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, cols.astype(np.int64), data


def best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'case':<12} {'op':<9} {'numpy':>10} {'numba':>10} {'speedup':>8}  match")
    for name, n_rows, n_cols, nnz, d in CASES:
        indptr, indices, data = make_csr(rng, n_rows, n_cols, nnz)
        x = rng.normal(size=(n_cols, d))
        g = rng.normal(size=(n_rows, d))

        # warm the jit before timing
        _numba_impl.csr_matmul(indptr, indices, data, x)
        _numba_impl.csr_matmul_t(indptr, indices, data, n_cols, g)

        t_np, out_np = best_of(lambda: _numpy_impl.csr_matmul(indptr, indices, data, x), args.repeats)
        t_nb, out_nb = best_of(lambda: _numba_impl.csr_matmul(indptr, indices, data, x), args.repeats)
        print(
            f"{name} {'matmul':<9} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
            f"{t_np / t_nb:>7.1f}x  {np.array_equal(out_np, out_nb)}"
        )

        t_np, out_np = best_of(
            lambda: _numpy_impl.csr_matmul_t(indptr, indices, data, n_cols, g), args.repeats
        )
        t_nb, out_nb = best_of(
            lambda: _numba_impl.csr_matmul_t(indptr, indices, data, n_cols, g), args.repeats
        )
        print(
            f"{name} {'matmul_t':<9} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
            f"{t_np / t_nb:>7.1f}x  {np.array_equal(out_np, out_nb)}"
        )


if __name__ == "__main__":
    main()
