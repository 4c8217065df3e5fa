"""Dense float64 tensor helpers.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. A batched
tensor carries the direction axis as its leading dimension.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(value) -> np.ndarray:
    """Convert ``value`` to a contiguous float64 array."""
    return np.ascontiguousarray(value, dtype=np.float64)


def inner_product(a, b) -> np.ndarray:
    """Broadcasting inner product.

    The lower-rank operand is contracted against the trailing dimensions of
    the higher-rank one. The result keeps the leading dimensions of the
    higher-rank operand, so a full contraction gives a 0-d array.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < b.ndim:
        a, b = b, a
    lead = a.ndim - b.ndim
    if a.shape[lead:] != b.shape:
        raise ShapeError(f"cannot contract shapes {a.shape} and {b.shape}")
    flat = a.reshape(a.shape[:lead] + (-1,))
    return flat @ b.reshape(-1)


def outer_power(v, k: int) -> np.ndarray:
    """Return ``v ⊗ v ⊗ ... ⊗ v`` with ``k`` factors."""
    v = as_tensor(v)
    if v.ndim != 1:
        raise ShapeError(f"outer_power expects a vector, got shape {v.shape}")
    if k < 1:
        raise ValueError(f"outer_power needs k >= 1, got {k}")
    out = v
    for _ in range(k - 1):
        out = np.multiply.outer(out, v)
    return out


def _check_binary(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape:
        return
    # One operand may carry a single extra leading (direction) axis.
    if a.ndim == b.ndim + 1 and a.shape[1:] == b.shape:
        return
    if b.ndim == a.ndim + 1 and b.shape[1:] == a.shape:
        return
    raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")


def add(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b)
    return a - b


def hadamard(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b)
    return a * b


def scale(a, c: float) -> np.ndarray:
    return as_tensor(a) * float(c)


def map_unary(fn: Callable[[np.ndarray], np.ndarray], a) -> np.ndarray:
    a = as_tensor(a)
    out = np.asarray(fn(a), dtype=np.float64)
    if out.shape != a.shape:
        raise ShapeError(f"unary map changed shape {a.shape} -> {out.shape}")
    return out
