"""Finite-difference verification of taped gradients."""

from __future__ import annotations

import numpy as np

from .sparse import SparseMatrix
from .tensor import EngineError, Tape, Tensor

__all__ = ["grad_check"]


def _parameter_array(p) -> np.ndarray:
    if isinstance(p, Tensor):
        return p.data
    if isinstance(p, SparseMatrix):
        return p.values
    raise TypeError(f"grad_check parameters must be Tensor or SparseMatrix, got {type(p).__name__}")


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Worst relative error between taped gradients of ``f`` and central differences.

    ``f`` is a zero-argument closure that rebuilds a scalar (1x1) loss from the
    entries of ``params`` (tensors or sparse matrices with
    ``requires_grad=True``). Every entry of every parameter is perturbed by
    ``±eps``; the reported error is
    ``max |analytic - numeric| / max(1, |numeric|)``. Two unperturbed
    evaluations are compared first to catch nondeterministic closures.
    """

    def evaluate() -> float:
        out = f()
        if not isinstance(out, Tensor) or out.data.shape != (1, 1):
            raise EngineError("grad_check closure must return a 1x1 tensor")
        return float(out.data[0, 0])

    with Tape() as tape:
        loss = f()
    grads = tape.backward(loss)

    if evaluate() != evaluate():
        raise EngineError("closure is nondeterministic: value drift between evaluations")

    worst = 0.0
    for p in params:
        target = _parameter_array(p)
        flat = target.reshape(-1)
        analytic = grads.get(p)
        analytic_flat = (
            np.zeros(flat.shape[0]) if analytic is None else np.asarray(analytic).reshape(-1)
        )
        for i in range(flat.shape[0]):
            original = flat[i]
            flat[i] = original + eps
            upper = evaluate()
            flat[i] = original - eps
            lower = evaluate()
            flat[i] = original
            numeric = (upper - lower) / (2.0 * eps)
            err = abs(analytic_flat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
