"""Dense linear-algebra kernel.

Matrices are plain 2-D numpy arrays. The helpers here add the shape and
finiteness checks every other module relies on.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def as_matrix(a, dtype=np.float64) -> np.ndarray:
    m = np.asarray(a, dtype=dtype)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def check_finite(m: np.ndarray, what: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(m)):
        bad = np.argwhere(~np.isfinite(m))[0]
        raise NonFiniteError(f"{what} has a non-finite entry at index {tuple(bad)}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape and finiteness checks."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return check_finite(a @ b, "matmul result")


def frobenius_norm_sq(m) -> float:
    m = np.asarray(m)
    return float(np.sum(m * m))
