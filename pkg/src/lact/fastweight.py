"""SwiGLU fast-weight network: read-out, dot-product loss and the chunk gradient.

Weights follow the row-vector convention ``x @ w``: ``w1`` and ``w3`` map the
input dimension ``d`` to the hidden dimension ``dh`` and ``w2`` maps back.
Every function also accepts leading batch axes (e.g. heads) on all arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numcore import check_finite, matmul, silu, silu_backprop, sigmoid


@dataclass(frozen=True)
class FastWeight:
    w1: np.ndarray  # (..., d, dh)
    w2: np.ndarray  # (..., dh, d)
    w3: np.ndarray  # (..., d, dh)

    def __post_init__(self):
        d, dh = self.w1.shape[-2:]
        if self.w3.shape != self.w1.shape or self.w2.shape[-2:] != (dh, d):
            raise DimensionError(
                f"inconsistent fast weight shapes {self.w1.shape}, {self.w2.shape}, {self.w3.shape}"
            )

    @property
    def d(self) -> int:
        return self.w1.shape[-2]

    @property
    def dh(self) -> int:
        return self.w1.shape[-1]

    def matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.w1, self.w2, self.w3

    def copy(self) -> FastWeight:
        return FastWeight(self.w1.copy(), self.w2.copy(), self.w3.copy())

    @property
    def size(self) -> int:
        return self.w1.size + self.w2.size + self.w3.size


def init_fast_weight(d: int, dh: int, rng: np.random.Generator, dtype=np.float64, batch: tuple = ()) -> FastWeight:
    """Gaussian init with std 1/sqrt(fan-in): fan-in is d for w1, w3 and dh for w2."""
    w1 = rng.standard_normal((*batch, d, dh)) / np.sqrt(d)
    w2 = rng.standard_normal((*batch, dh, d)) / np.sqrt(dh)
    w3 = rng.standard_normal((*batch, d, dh)) / np.sqrt(d)
    return FastWeight(w1.astype(dtype), w2.astype(dtype), w3.astype(dtype))


@dataclass(frozen=True)
class ChunkTokens:
    """Per-head token bundle: q, k, v of shape (l, d) and lr of shape (l, 3)."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    lr: np.ndarray

    def __post_init__(self):
        shape = self.k.shape
        if self.k.ndim < 2 or self.q.shape != shape or self.v.shape != shape:
            raise DimensionError(f"q {self.q.shape}, k {shape}, v {self.v.shape} must share one (..., l, d) shape")
        if shape[-2] < 1:
            raise DimensionError("a chunk needs at least one token")
        if self.lr.shape != (*shape[:-1], 3):
            raise DimensionError(f"lr has shape {self.lr.shape}, expected {(*shape[:-1], 3)}")
        if np.any(self.lr < 0):
            raise ValueError("learning rates must be non-negative")

    def __len__(self):
        return self.k.shape[-2]

    def slice(self, begin: int, end: int) -> ChunkTokens:
        return ChunkTokens(
            self.q[..., begin:end, :], self.k[..., begin:end, :],
            self.v[..., begin:end, :], self.lr[..., begin:end, :],
        )


def _check_tokens(fw: FastWeight, x: np.ndarray, name: str):
    if x.ndim < 2 or x.shape[-1] != fw.w1.shape[-2]:
        raise DimensionError(f"{name} has shape {x.shape}, expected (..., l, {fw.w1.shape[-2]})")


def apply_fw(fw: FastWeight, q: np.ndarray) -> np.ndarray:
    _check_tokens(fw, q, "q")
    hidden = silu(matmul(q, fw.w1)) * matmul(q, fw.w3)
    return matmul(hidden, fw.w2)


def fw_loss(fw: FastWeight, k: np.ndarray, v: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Summed dot-product loss ``-sum_i w_i f(k_i).v_i``; unweighted when ``weights`` is None."""
    if v.shape != k.shape:
        raise DimensionError(f"k {k.shape} and v {v.shape} differ")
    per_token = -np.sum(apply_fw(fw, k) * v, axis=-1)
    if weights is not None:
        per_token = per_token * weights
    return float(np.sum(per_token))


def chunk_gradient(fw: FastWeight, k: np.ndarray, v: np.ndarray, lr: np.ndarray):
    """Gradients of the lr-weighted dot-product loss over one chunk.

    ``lr[..., i, m]`` weights token ``i`` in the gradient of matrix ``m`` (w1, w2, w3).
    Returns ``(g1, g2, g3)`` with the loss sign already folded in, so the update is
    ``w - g``.
    """
    _check_tokens(fw, k, "k")
    if v.shape != k.shape:
        raise DimensionError(f"k {k.shape} and v {v.shape} differ")
    if lr.shape != (*k.shape[:-1], 3):
        raise DimensionError(f"lr has shape {lr.shape}, expected {(*k.shape[:-1], 3)}")
    lr1, lr2, lr3 = lr[..., 0:1], lr[..., 1:2], lr[..., 2:3]

    gate_before_act = matmul(k, fw.w1)
    hidden_before_gate = matmul(k, fw.w3)
    sig = sigmoid(gate_before_act)
    hidden = gate_before_act * sig * hidden_before_gate

    dhidden = matmul(v, fw.w2.swapaxes(-1, -2))
    dhidden_before_gate = dhidden * gate_before_act * sig
    dgate = dhidden * hidden_before_gate
    dgate_before_act = silu_backprop(dgate, gate_before_act)

    g2 = -matmul(hidden.swapaxes(-1, -2), v * lr2)
    g1 = -matmul((k * lr1).swapaxes(-1, -2), dgate_before_act)
    g3 = -matmul((k * lr3).swapaxes(-1, -2), dhidden_before_gate)
    for name, g in (("g1", g1), ("g2", g2), ("g3", g3)):
        check_finite(g, f"chunk gradient {name}")
    return g1, g2, g3
