import subprocess
import sys

import numpy as np
import pytest

from disengcd import kernels
from disengcd.kernels import _numba_impl, _numpy_impl


def random_csr(rng, n_rows, n_cols, density=0.3):
    mask = rng.random((n_rows, n_cols)) < density
    rows, cols = np.nonzero(mask)
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    data = rng.normal(size=rows.size)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, cols.astype(np.int64), data


@pytest.mark.parametrize("seed", range(5))
def test_backends_agree_bitwise_forward(seed):
    rng = np.random.default_rng(seed)
    indptr, indices, data = random_csr(rng, 17, 11)
    x = rng.normal(size=(11, 6))
    a = _numba_impl.csr_matmul(indptr, indices, data, x)
    b = _numpy_impl.csr_matmul(indptr, indices, data, x)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("seed", range(5))
def test_backends_agree_bitwise_transpose(seed):
    rng = np.random.default_rng(seed + 100)
    indptr, indices, data = random_csr(rng, 13, 19)
    g = rng.normal(size=(13, 4))
    a = _numba_impl.csr_matmul_t(indptr, indices, data, 19, g)
    b = _numpy_impl.csr_matmul_t(indptr, indices, data, 19, g)
    assert np.array_equal(a, b)


def test_transpose_kernel_matches_dense_transpose():
    rng = np.random.default_rng(7)
    indptr, indices, data = random_csr(rng, 9, 12)
    dense = np.zeros((9, 12))
    rows = np.repeat(np.arange(9), np.diff(indptr))
    dense[rows, indices] = data
    g = rng.normal(size=(9, 5))
    assert np.allclose(kernels.csr_matmul_t(indptr, indices, data, 12, g), dense.T @ g)


def test_empty_matrix_products():
    indptr = np.zeros(4, dtype=np.int64)
    indices = np.zeros(0, dtype=np.int64)
    data = np.zeros(0)
    x = np.ones((5, 2))
    assert kernels.csr_matmul(indptr, indices, data, x).shape == (3, 2)
    assert not kernels.csr_matmul(indptr, indices, data, x).any()


def _backend_of(env_value):
    code = "import disengcd.kernels as k; print(k.BACKEND)"
    out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "DISENGCD_BACKEND": env_value},
    )
    assert out.returncode == 0, out.stderr
    return out.stdout.strip()


def test_env_flag_selects_backend():
    assert _backend_of("numpy") == "numpy"
    assert _backend_of("numba") == "numba"
    assert _backend_of("auto") == "numba"  # numba is installed here


def test_env_flag_rejects_garbage():
    code = "import disengcd.kernels"
    out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "DISENGCD_BACKEND": "gpu"},
    )
    assert out.returncode != 0
    assert "DISENGCD_BACKEND" in out.stderr
