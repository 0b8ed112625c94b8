"""Dense float64 primitives with hand-coded backward rules.

Matrices are plain ``numpy.ndarray`` objects of dtype float64: 2-D for a
``Matrix``, 3-D ``(batch, seq, dim)`` for a batch tensor, 1-D for vectors.
Every function returns a fresh array and never mutates its inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

DTYPE = np.float64


def as_matrix(a) -> np.ndarray:
    arr = np.asarray(a, dtype=DTYPE)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Standard matrix product ``a @ b``."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matmul_backward(a, b, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(upstream * (a @ b))`` w.r.t. ``a`` and ``b``."""
    upstream = np.asarray(upstream, dtype=DTYPE)
    return upstream @ np.asarray(b).T, np.asarray(a).T @ upstream


def batched_matmul(a, b) -> np.ndarray:
    """Independent matrix product for every batch index.

    ``a`` is ``(B, n, m)`` and ``b`` is ``(B, m, p)``; the result is
    ``(B, n, p)``.
    """
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError(f"batched_matmul expects 3-D tensors, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"batched_matmul: batch mismatch {a.shape} vs {b.shape}")
    if a.shape[2] != b.shape[1]:
        raise ShapeError(f"batched_matmul: inner dimension mismatch {a.shape} vs {b.shape}")
    return np.matmul(a, b)


def batched_matmul_backward(a, b, upstream) -> tuple[np.ndarray, np.ndarray]:
    upstream = np.asarray(upstream, dtype=DTYPE)
    return (
        np.matmul(upstream, np.swapaxes(b, 1, 2)),
        np.matmul(np.swapaxes(a, 1, 2), upstream),
    )


def softmax(x, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    x = np.asarray(x, dtype=DTYPE)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_rows(x) -> np.ndarray:
    return softmax(as_matrix(x), axis=1)


def softmax_backward(y, upstream, axis: int = -1) -> np.ndarray:
    """Backward of softmax given its output ``y``."""
    upstream = np.asarray(upstream, dtype=DTYPE)
    inner = np.sum(upstream * y, axis=axis, keepdims=True)
    return y * (upstream - inner)


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_backward(x, upstream) -> np.ndarray:
    """Pass ``upstream`` where ``x > 0``; zero elsewhere (including x == 0)."""
    x = np.asarray(x, dtype=DTYPE)
    upstream = np.asarray(upstream, dtype=DTYPE)
    if x.shape != upstream.shape:
        raise ShapeError(f"relu_backward: shape {x.shape} vs upstream {upstream.shape}")
    return np.where(x > 0.0, upstream, 0.0)


def l2_normalize(v, eps: float = 1e-8) -> np.ndarray:
    """Return ``v / (||v||_2 + eps)``; the zero vector maps to zero."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    v = np.asarray(v, dtype=DTYPE)
    return v / (np.linalg.norm(v) + eps)


def l2_normalize_backward(v, upstream, eps: float = 1e-8) -> np.ndarray:
    v = np.asarray(v, dtype=DTYPE)
    upstream = np.asarray(upstream, dtype=DTYPE)
    norm = np.linalg.norm(v)
    denom = norm + eps
    if norm == 0.0:
        return upstream / denom
    return upstream / denom - v * (np.dot(upstream, v) / (norm * denom * denom))
