"""Typed sparse adjacency stored in CSR form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, NumericError


@dataclass(frozen=True)
class SparseAdjacency:
    """Immutable nonnegative sparse matrix over two node sets.

    Rows are aggregation targets, columns are sources; ``matmul`` computes
    one message-passing step when rows are normalized.
    """

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @classmethod
    def from_entries(cls, n_rows, n_cols, rows, cols, weights=None) -> "SparseAdjacency":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if weights is None:
            weights = np.ones(rows.shape[0], dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if not (rows.shape == cols.shape == weights.shape):
            raise ContractError("rows, cols and weights must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= n_rows:
                raise ContractError(f"row index out of range [0, {n_rows})")
            if cols.min() < 0 or cols.max() >= n_cols:
                raise ContractError(f"column index out of range [0, {n_cols})")
            if not np.all(np.isfinite(weights)):
                raise NumericError("adjacency weights must be finite")
            if np.any(weights < 0):
                raise ContractError("adjacency weights must be >= 0")
        order = np.lexsort((cols, rows))
        rows, cols, weights = rows[order], cols[order], weights[order]
        if rows.size > 1:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if dup.any():
                i = int(np.flatnonzero(dup)[0])
                raise ContractError(
                    f"duplicate entry at (row={rows[i + 1]}, col={cols[i + 1]})"
                )
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(n_rows, n_cols, indptr, cols, weights)

    @classmethod
    def empty(cls, n_rows, n_cols) -> "SparseAdjacency":
        return cls.from_entries(n_rows, n_cols, [], [])

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def entries(self):
        """Yield (row, col, weight) in row-major order."""
        for r in range(self.n_rows):
            for e in range(self.indptr[r], self.indptr[r + 1]):
                yield int(r), int(self.indices[e]), float(self.data[e])

    def row_degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def row_normalized(self) -> "SparseAdjacency":
        """Rescale so every nonempty row sums to 1."""
        sums = np.zeros(self.n_rows)
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        np.add.at(sums, rows, self.data)
        scale = np.where(sums > 0, 1.0 / np.where(sums > 0, sums, 1.0), 0.0)
        return SparseAdjacency(
            self.n_rows, self.n_cols, self.indptr, self.indices, self.data * scale[rows]
        )

    def transpose(self) -> "SparseAdjacency":
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        return SparseAdjacency.from_entries(
            self.n_cols, self.n_rows, self.indices, rows, self.data
        )

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out

    def pattern_mask(self) -> np.ndarray:
        """Dense 0/1 indicator of the sparsity pattern."""
        out = np.zeros((self.n_rows, self.n_cols))
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        out[rows, self.indices] = 1.0
        return out

    def matmul(self, dense: np.ndarray) -> np.ndarray:
        if dense.shape[0] != self.n_cols:
            raise ContractError(
                f"sparse {self.shape} @ dense {dense.shape}: inner dims differ"
            )
        return kernels.csr_matmul(self.indptr, self.indices, self.data, dense)

    def t_matmul(self, dense: np.ndarray) -> np.ndarray:
        """Transpose product: self.T @ dense, without materializing the transpose."""
        if dense.shape[0] != self.n_rows:
            raise ContractError(
                f"sparse.T {self.shape[::-1]} @ dense {dense.shape}: inner dims differ"
            )
        return kernels.csr_matmul_t(
            self.indptr, self.indices, self.data, self.n_cols, dense
        )

    def same_structure(self, other: "SparseAdjacency") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )
