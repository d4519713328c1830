"""Pure-numpy reference kernels.

Kept semantically identical to the numba kernels: same nnz visiting order,
so results match bit-for-bit between backends.
"""

import numpy as np

BACKEND = "numpy"


def csr_matmul(indptr, indices, data, dense):
    """CSR sparse @ dense.  Returns (n_rows, dense.shape[1])."""
    n_rows = indptr.shape[0] - 1
    out = np.zeros((n_rows, dense.shape[1]), dtype=np.float64)
    rows = np.repeat(np.arange(n_rows), np.diff(indptr))
    np.add.at(out, rows, data[:, None] * dense[indices])
    return out


def csr_matmul_t(indptr, indices, data, n_cols, dense):
    """CSR-transpose @ dense: scatter rows of `dense` to the column index."""
    n_rows = indptr.shape[0] - 1
    out = np.zeros((n_cols, dense.shape[1]), dtype=np.float64)
    rows = np.repeat(np.arange(n_rows), np.diff(indptr))
    np.add.at(out, indices, data[:, None] * dense[rows])
    return out
