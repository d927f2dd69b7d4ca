"""Dense-matrix helpers and scalar nonlinearities shared by every other module.

Matrices are plain ``numpy.ndarray`` objects: 2-D for a single matrix, 3-D for
a batch of equally shaped matrices. Precision is carried by the dtype.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import DimensionError, NumericError

PRECISIONS = {"single": np.float32, "double": np.float64}


def dtype_for(precision: str) -> np.dtype:
    try:
        return np.dtype(PRECISIONS[precision])
    except KeyError:
        raise ValueError(f"unknown precision {precision!r}, expected one of {sorted(PRECISIONS)}") from None


def default_eps(dtype) -> float:
    """Guard used by every norm: 1e-6 in single precision, 1e-12 in double."""
    return 1e-6 if np.dtype(dtype) == np.float32 else 1e-12


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two matrices (or two broadcast-compatible batches)."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got ndim {a.ndim} and {b.ndim}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def check_finite(x: np.ndarray, what: str = "value") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite entries in {what}")
    return x


def sigmoid(x):
    return expit(x)


def silu(x):
    return x * expit(x)


def silu_backprop(dy, x):
    """Gradient of silu at ``x`` multiplied by the upstream gradient ``dy``."""
    sigma = expit(x)
    return dy * sigma * (1 + x * (1 - sigma))


def softplus(x):
    # logaddexp(0, x) = log(1 + e^x) without overflow for large |x|
    return np.logaddexp(0.0, x)


def inverse_softplus(y: float) -> float:
    """The bias ``c`` with ``softplus(c) == y``; ``y`` must be positive."""
    if y <= 0:
        raise ValueError("softplus is strictly positive")
    return float(y + np.log(-np.expm1(-y)))


def l2_normalize_rows(m: np.ndarray, eps: float | None = None) -> np.ndarray:
    """Scale every row (last axis) to unit L2 norm; rows shorter than eps are left as they are."""
    if eps is None:
        eps = default_eps(m.dtype)
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    small = norms < eps
    return np.where(small, m, m / np.where(small, 1.0, norms))


def rms_norm(v: np.ndarray, eps: float | None = None) -> np.ndarray:
    """Gain-free RMS normalization over the last axis."""
    if eps is None:
        eps = default_eps(v.dtype)
    return v / np.sqrt(np.mean(v * v, axis=-1, keepdims=True) + eps)
