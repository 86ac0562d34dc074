"""Finite-difference verification of analytic gradients."""

from typing import Callable, List, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad, precision


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_gradient(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], which: int) -> np.ndarray:
    """Central differences of fn with respect to inputs[which], step h = 1e-4·(1+|x|)."""
    base = np.array(inputs[which], dtype=np.float64)
    numeric = np.zeros_like(base)

    def evaluate(value):
        args = [Tensor(value if j == which else x) for j, x in enumerate(inputs)]
        return fn(*args).item()

    with no_grad():
        for idx in np.ndindex(base.shape):
            h = 1e-4 * (1.0 + abs(base[idx]))
            shifted = base.copy()
            shifted[idx] = base[idx] + h
            upper = evaluate(shifted)
            shifted[idx] = base[idx] - h
            lower = evaluate(shifted)
            numeric[idx] = (upper - lower) / (2.0 * h)
    return numeric


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray]) -> List[float]:
    """Compare backward() with central finite differences in 64-bit mode.

    Args:
        fn: Maps one Tensor per input to a scalar Tensor. Any randomness
            inside fn must be re-seeded on every call.
        inputs: Arrays at which the gradients are evaluated

    Returns:
        List[float]: relative error per input
    """
    with precision(np.float64):
        inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
        leaves = [Tensor(x, requires_grad=True) for x in inputs]
        analytic = backward(fn(*leaves), leaves)
        return [relative_error(analytic[i], numeric_gradient(fn, inputs, i)) for i in range(len(inputs))]
