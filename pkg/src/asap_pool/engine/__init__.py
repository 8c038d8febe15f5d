"""Minimal float64 autodiff engine: dense tensors, sparse matrices, a tape."""

from .gradcheck import grad_check
from .ops import (
    add,
    concat_cols,
    concat_rows,
    elementwise,
    gather_rows,
    hadamard,
    leaky_relu,
    matmul,
    reduce_mean,
    reduce_sum,
    relu,
    rsqrt,
    scale,
    segment_reduce,
    segment_softmax,
    sigmoid,
    sub,
    tanh,
)
from .sparse import (
    SparseMatrix,
    densify,
    sparse_add_identity,
    sparse_make,
    sparse_row_sums,
    sparse_scale_entries,
    sparse_select_columns,
    sparse_submatrix,
    sparse_transpose,
    sparse_values,
    sparse_zero_diagonal,
    spmm,
    spspmm,
)
from .tensor import EngineError, ShapeError, Tape, TapeError, Tensor, active_tape, record

__all__ = [
    "EngineError",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "SparseMatrix",
    "active_tape",
    "record",
    "grad_check",
    "matmul",
    "add",
    "sub",
    "hadamard",
    "scale",
    "relu",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "rsqrt",
    "elementwise",
    "reduce_sum",
    "reduce_mean",
    "gather_rows",
    "concat_rows",
    "concat_cols",
    "segment_reduce",
    "segment_softmax",
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
