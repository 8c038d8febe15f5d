"""Sparse matrices in canonical COO form and their differentiable operations.

A :class:`SparseMatrix` stores a fixed sparsity pattern (``rows``, ``cols`` in
row-major order, no duplicates) and a 1-D ``values`` array that participates
in gradient flow exactly like a dense tensor's entries: sparse outputs of
taped operations are tracked, and leaves created with ``requires_grad=True``
receive a per-entry gradient vector on ``.grad``.

scipy.sparse provides the CSR kernels behind matrix products; the pattern
bookkeeping (selection, transposes, unions) is done here so gradients can be
routed entry-for-entry.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import ops
from .tensor import EngineError, ShapeError, Tensor, record

__all__ = [
    "SparseMatrix",
    "spmm",
    "spspmm",
    "sparse_make",
    "sparse_values",
    "sparse_row_sums",
    "sparse_transpose",
    "sparse_scale_entries",
    "sparse_add_identity",
    "sparse_zero_diagonal",
    "sparse_select_columns",
    "sparse_submatrix",
    "densify",
]


def _encode(rows: np.ndarray, cols: np.ndarray, n_cols: int) -> np.ndarray:
    return rows.astype(np.int64) * np.int64(n_cols) + cols.astype(np.int64)


class SparseMatrix:
    """A 2-D float64 sparse matrix with a canonical COO layout.

    Entries are sorted by ``(row, col)`` and unique; ``values[k]`` is the
    entry at ``(rows[k], cols[k])``. The pattern is immutable; ``values`` may
    be perturbed in place (finite-difference checks do), which is why the CSR
    view is only cached for untracked matrices.
    """

    __slots__ = ("shape", "rows", "cols", "values", "requires_grad", "grad", "_csr")

    def __init__(self, shape, rows, cols, values, requires_grad: bool = False):
        n_rows, n_cols = (int(shape[0]), int(shape[1]))
        if n_rows < 0 or n_cols < 0:
            raise ShapeError(f"bad sparse shape {shape}")
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == values.shape):
            raise ShapeError("rows, cols and values must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols:
                raise IndexError(f"sparse entry outside shape ({n_rows}, {n_cols})")
            keys = _encode(rows, cols, n_cols)
            deltas = np.diff(keys)
            if np.any(deltas < 0):
                raise EngineError("sparse entries must be in row-major order")
            if np.any(deltas == 0):
                raise EngineError("duplicate sparse entry")
        self.shape = (n_rows, n_cols)
        self.rows = rows
        self.cols = cols
        self.values = values
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._csr = None

    @classmethod
    def from_coo(cls, shape, rows, cols, values, requires_grad: bool = False) -> "SparseMatrix":
        """Build from unordered COO triplets; duplicate coordinates are an error."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        order = np.lexsort((cols, rows))
        return cls(shape, rows[order], cols[order], values[order], requires_grad=requires_grad)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n)
        return cls((n, n), idx, idx, np.ones(n))

    @classmethod
    def empty(cls, shape) -> "SparseMatrix":
        z = np.zeros(0)
        return cls(shape, z, z, z)

    @property
    def nnz(self) -> int:
        return self.values.shape[0]

    def csr(self) -> sp.csr_matrix:
        """scipy CSR view of the current values (cached only when untracked)."""
        if self._csr is not None:
            return self._csr
        mat = sp.csr_matrix((self.values, (self.rows, self.cols)), shape=self.shape)
        if not self.requires_grad:
            self._csr = mat
        return mat

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.values
        return out

    def with_values(self, values) -> "SparseMatrix":
        """Same pattern, new values (constant result)."""
        return SparseMatrix(self.shape, self.rows, self.cols, values)

    def pattern_key(self) -> np.ndarray:
        """Row-major linear index of each stored entry (sorted, unique)."""
        return _encode(self.rows, self.cols, self.shape[1])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz}{flag})"


def _sparse_out(shape, rows, cols, values) -> SparseMatrix:
    if ops.DEBUG_CHECKS and not np.all(np.isfinite(values)):
        raise EngineError("non-finite values produced by a sparse operation")
    return SparseMatrix(shape, rows, cols, values)


def spmm(s: SparseMatrix, d: Tensor) -> Tensor:
    """Sparse @ dense product with gradients to both operands."""
    if s.shape[1] != d.data.shape[0]:
        raise ShapeError(f"spmm inner dims differ: {s.shape} @ {d.data.shape}")
    out_data = s.csr() @ d.data if s.nnz else np.zeros((s.shape[0], d.data.shape[1]))
    out = Tensor(out_data)

    def backward(grad, accumulate):
        if d.requires_grad:
            accumulate(d, s.csr().T @ grad)
        if s.requires_grad:
            accumulate(s, (grad[s.rows] * d.data[s.cols]).sum(axis=1))

    record(out, (s, d), backward)
    return out


def spspmm(a: SparseMatrix, b: SparseMatrix) -> SparseMatrix:
    """Sparse @ sparse product; the result pattern is whatever is structurally nonzero."""
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"spspmm inner dims differ: {a.shape} @ {b.shape}")
    prod = (a.csr() @ b.csr()).tocsr()
    prod.sum_duplicates()
    prod.sort_indices()
    coo = prod.tocoo()
    out = _sparse_out((a.shape[0], b.shape[1]), coo.row, coo.col, coo.data)

    def backward(grad, accumulate):
        grad_csr = sp.csr_matrix((grad, (out.rows, out.cols)), shape=out.shape)
        if a.requires_grad:
            full = (grad_csr @ b.csr().T).tocsr()
            accumulate(a, np.asarray(full[a.rows, a.cols]).ravel())
        if b.requires_grad:
            full = (a.csr().T @ grad_csr).tocsr()
            accumulate(b, np.asarray(full[b.rows, b.cols]).ravel())

    record(out, (a, b), backward)
    return out


def sparse_make(shape, rows, cols, values: Tensor) -> SparseMatrix:
    """Assemble a sparse matrix whose values come from an ``nnz x 1`` tensor."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    if values.data.shape != (rows.shape[0], 1):
        raise ShapeError(f"values must be {rows.shape[0]}x1, got {values.data.shape}")
    out = _sparse_out(shape, rows, cols, values.data[:, 0].copy())

    def backward(grad, accumulate):
        accumulate(values, grad[:, None])

    record(out, (values,), backward)
    return out


def sparse_values(s: SparseMatrix) -> Tensor:
    """The stored values as an ``nnz x 1`` tensor."""
    out = Tensor(s.values[:, None].copy())

    def backward(grad, accumulate):
        accumulate(s, grad[:, 0])

    record(out, (s,), backward)
    return out


def sparse_row_sums(s: SparseMatrix) -> Tensor:
    """Row sums as an ``n x 1`` tensor."""
    sums = np.bincount(s.rows, weights=s.values, minlength=s.shape[0])
    out = Tensor(sums[:, None])

    def backward(grad, accumulate):
        accumulate(s, grad[s.rows, 0])

    record(out, (s,), backward)
    return out


def sparse_transpose(s: SparseMatrix) -> SparseMatrix:
    """Transpose, re-sorted into canonical order."""
    order = np.lexsort((s.rows, s.cols))
    out = _sparse_out((s.shape[1], s.shape[0]), s.cols[order], s.rows[order], s.values[order])

    def backward(grad, accumulate):
        back = np.empty_like(grad)
        back[order] = grad
        accumulate(s, back)

    record(out, (s,), backward)
    return out


def sparse_scale_entries(s: SparseMatrix, row_factors: Tensor, col_factors: Tensor) -> SparseMatrix:
    """Scale entry ``(i, j)`` by ``row_factors[i] * col_factors[j]``.

    This is the symmetric-normalization primitive: with both factor columns
    equal to ``degree ** -0.5`` it computes ``D^-1/2 A D^-1/2``.
    """
    if row_factors.data.shape != (s.shape[0], 1):
        raise ShapeError("row_factors must be a column with one entry per row")
    if col_factors.data.shape != (s.shape[1], 1):
        raise ShapeError("col_factors must be a column with one entry per column")
    rf = row_factors.data[:, 0]
    cf = col_factors.data[:, 0]
    out = _sparse_out(s.shape, s.rows, s.cols, s.values * rf[s.rows] * cf[s.cols])

    def backward(grad, accumulate):
        accumulate(s, grad * rf[s.rows] * cf[s.cols])
        if row_factors.requires_grad:
            contrib = grad * s.values * cf[s.cols]
            accumulate(row_factors, np.bincount(s.rows, weights=contrib, minlength=s.shape[0])[:, None])
        if col_factors.requires_grad:
            contrib = grad * s.values * rf[s.rows]
            accumulate(col_factors, np.bincount(s.cols, weights=contrib, minlength=s.shape[1])[:, None])

    record(out, (s, row_factors, col_factors), backward)
    return out


def sparse_add_identity(s: SparseMatrix) -> SparseMatrix:
    """Add the identity to a square matrix (pattern union; diagonal +1)."""
    n = s.shape[0]
    if s.shape[0] != s.shape[1]:
        raise ShapeError("sparse_add_identity needs a square matrix")
    diag = np.arange(n, dtype=np.int64)
    all_rows = np.concatenate((s.rows, diag))
    all_cols = np.concatenate((s.cols, diag))
    all_vals = np.concatenate((s.values, np.ones(n)))
    keys = _encode(all_rows, all_cols, n)
    order = np.argsort(keys, kind="stable")
    sk, sr, sc, sv = keys[order], all_rows[order], all_cols[order], all_vals[order]
    # Collapse duplicate coordinates (an existing diagonal entry gets +1).
    group_starts = np.concatenate(([0], np.flatnonzero(np.diff(sk)) + 1))
    group_of = np.cumsum(np.concatenate(([0], (np.diff(sk) != 0).astype(np.int64))))
    merged = np.bincount(group_of, weights=sv)
    out = _sparse_out(s.shape, sr[group_starts], sc[group_starts], merged)

    # Where each original entry landed in the merged layout.
    position = np.empty(all_rows.shape[0], dtype=np.int64)
    position[order] = group_of
    original_pos = position[: s.nnz]

    def backward(grad, accumulate):
        accumulate(s, grad[original_pos])

    record(out, (s,), backward)
    return out


def sparse_zero_diagonal(s: SparseMatrix) -> SparseMatrix:
    """Drop any diagonal entries of a square matrix."""
    if s.shape[0] != s.shape[1]:
        raise ShapeError("sparse_zero_diagonal needs a square matrix")
    keep = np.flatnonzero(s.rows != s.cols)
    out = _sparse_out(s.shape, s.rows[keep], s.cols[keep], s.values[keep])

    def backward(grad, accumulate):
        back = np.zeros(s.nnz)
        back[keep] = grad
        accumulate(s, back)

    record(out, (s,), backward)
    return out


def _position_map(indices: np.ndarray, size: int, what: str) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise IndexError(f"{what} index out of range")
    lookup = np.full(size, -1, dtype=np.int64)
    lookup[idx] = np.arange(idx.shape[0])
    if np.count_nonzero(lookup >= 0) != idx.shape[0]:
        raise EngineError(f"duplicate {what} index")
    return lookup


def sparse_select_columns(s: SparseMatrix, col_indices) -> SparseMatrix:
    """Keep columns listed in ``col_indices``, renumbered to that order."""
    col_indices = np.asarray(col_indices, dtype=np.int64).ravel()
    lookup = _position_map(col_indices, s.shape[1], "column")
    new_cols_all = lookup[s.cols]
    keep = np.flatnonzero(new_cols_all >= 0)
    rows, cols, vals = s.rows[keep], new_cols_all[keep], s.values[keep]
    order = np.lexsort((cols, rows))
    out = _sparse_out((s.shape[0], col_indices.shape[0]), rows[order], cols[order], vals[order])
    source = keep[order]

    def backward(grad, accumulate):
        back = np.zeros(s.nnz)
        back[source] = grad
        accumulate(s, back)

    record(out, (s,), backward)
    return out


def sparse_submatrix(s: SparseMatrix, row_indices, col_indices) -> SparseMatrix:
    """Entries with row in ``row_indices`` and column in ``col_indices``, renumbered."""
    row_indices = np.asarray(row_indices, dtype=np.int64).ravel()
    col_indices = np.asarray(col_indices, dtype=np.int64).ravel()
    row_lookup = _position_map(row_indices, s.shape[0], "row")
    col_lookup = _position_map(col_indices, s.shape[1], "column")
    new_rows_all = row_lookup[s.rows]
    new_cols_all = col_lookup[s.cols]
    keep = np.flatnonzero((new_rows_all >= 0) & (new_cols_all >= 0))
    rows, cols, vals = new_rows_all[keep], new_cols_all[keep], s.values[keep]
    order = np.lexsort((cols, rows))
    out = _sparse_out(
        (row_indices.shape[0], col_indices.shape[0]), rows[order], cols[order], vals[order]
    )
    source = keep[order]

    def backward(grad, accumulate):
        back = np.zeros(s.nnz)
        back[source] = grad
        accumulate(s, back)

    record(out, (s,), backward)
    return out


def densify(s: SparseMatrix) -> Tensor:
    """Dense tensor with the sparse entries filled in (zeros elsewhere)."""
    out = Tensor(s.to_dense())

    def backward(grad, accumulate):
        accumulate(s, grad[s.rows, s.cols])

    record(out, (s,), backward)
    return out
