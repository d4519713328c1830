"""Backend dispatch for the hot sparse kernels.

``DISENGCD_BACKEND`` selects the implementation:

* ``auto`` (default): numba when importable, else pure numpy
* ``numba``: require the jit kernels, fail loudly if numba is missing
* ``numpy``: force the pure-numpy fallback

Both backends visit nonzeros in the same order and agree bit-for-bit;
``benchmarks/bench_kernels.py`` compares their speed.
"""

import os

_choice = os.environ.get("DISENGCD_BACKEND", "auto").strip().lower()

if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"DISENGCD_BACKEND must be one of auto/numba/numpy, got {_choice!r}"
    )

if _choice == "numpy":
    from ._numpy_impl import BACKEND, csr_matmul, csr_matmul_t
else:
    try:
        from ._numba_impl import BACKEND, csr_matmul, csr_matmul_t
    except ImportError:
        if _choice == "numba":
            raise
        from ._numpy_impl import BACKEND, csr_matmul, csr_matmul_t

__all__ = ["BACKEND", "csr_matmul", "csr_matmul_t"]
