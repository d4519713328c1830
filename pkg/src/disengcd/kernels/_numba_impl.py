"""Numba-compiled kernels for the sparse-dense products that dominate runtime.

Loops run serially: aggregation order is part of the determinism contract,
so no prange here.
"""

import numpy as np
from numba import njit

BACKEND = "numba"


@njit(cache=True)
def csr_matmul(indptr, indices, data, dense):
    n_rows = indptr.shape[0] - 1
    d = dense.shape[1]
    out = np.zeros((n_rows, d), dtype=np.float64)
    for r in range(n_rows):
        for e in range(indptr[r], indptr[r + 1]):
            w = data[e]
            c = indices[e]
            for k in range(d):
                out[r, k] += w * dense[c, k]
    return out


@njit(cache=True)
def csr_matmul_t(indptr, indices, data, n_cols, dense):
    n_rows = indptr.shape[0] - 1
    d = dense.shape[1]
    out = np.zeros((n_cols, d), dtype=np.float64)
    for r in range(n_rows):
        for e in range(indptr[r], indptr[r + 1]):
            w = data[e]
            c = indices[e]
            for k in range(d):
                out[c, k] += w * dense[r, k]
    return out
