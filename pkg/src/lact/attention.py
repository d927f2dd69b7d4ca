"""Local softmax attention (sliding causal or block bidirectional) and a naive oracle."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError, DimensionError

WindowKind = Literal["sliding_causal", "block_bidirectional"]


@dataclass(frozen=True)
class WindowSpec:
    kind: WindowKind = "sliding_causal"
    window: int = 1

    def __post_init__(self):
        if self.kind not in ("sliding_causal", "block_bidirectional"):
            raise ConfigError(f"unknown window kind {self.kind!r}")
        if self.window < 1:
            raise ConfigError("window must be >= 1")


def window_mask(length: int, spec: WindowSpec) -> np.ndarray:
    """Boolean (length x length) matrix of which keys each query may attend to."""
    i = np.arange(length)[:, None]
    j = np.arange(length)[None, :]
    if spec.kind == "sliding_causal":
        return (j <= i) & (j > i - spec.window)
    return (i // spec.window) == (j // spec.window)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    logits = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=-1, keepdims=True)


def _check(q, k, v):
    if q.ndim != 2 or q.shape != k.shape or k.shape[0] != v.shape[0]:
        raise DimensionError(f"attention shapes q{q.shape} k{k.shape} v{v.shape} do not match")


def window_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Single-head windowed attention with scale 1/sqrt(hd).

    Queries are processed in tiles of ``spec.window`` rows; each tile only touches
    the keys its window can reach, so cost is O(l * window).
    """
    _check(q, k, v)
    length, hd = q.shape
    scale = 1.0 / np.sqrt(hd)
    w = spec.window
    out = np.empty((length, v.shape[1]), dtype=np.result_type(q, v))
    for start in range(0, length, w):
        stop = min(start + w, length)
        if spec.kind == "block_bidirectional":
            lo, hi = start, stop
            allowed = None
        else:
            lo, hi = max(0, start - w + 1), stop
            i = np.arange(start, stop)[:, None]
            j = np.arange(lo, hi)[None, :]
            allowed = (j <= i) & (j > i - w)
        logits = (q[start:stop] @ k[lo:hi].T) * scale
        if allowed is not None:
            logits = np.where(allowed, logits, -np.inf)
        out[start:stop] = _softmax_rows(logits) @ v[lo:hi]
    return out


def multihead_window_attention(q, k, v, spec: WindowSpec, num_heads: int) -> np.ndarray:
    """Split the channel axis into ``num_heads`` heads, attend per head, concatenate."""
    d = q.shape[-1]
    if d % num_heads:
        raise ConfigError(f"{num_heads} heads do not divide dimension {d}")
    hd = d // num_heads
    heads = [
        window_attention(q[:, h * hd:(h + 1) * hd], k[:, h * hd:(h + 1) * hd], v[:, h * hd:(h + 1) * hd], spec)
        for h in range(num_heads)
    ]
    return np.concatenate(heads, axis=-1)


def full_attention_oracle(q, k, v, causal: bool = False, return_weights: bool = False):
    """Direct O(l^2) softmax attention over the whole sequence."""
    _check(q, k, v)
    logits = (q @ k.T) / np.sqrt(q.shape[1])
    if causal:
        logits = np.where(np.tril(np.ones(logits.shape, dtype=bool)), logits, -np.inf)
    weights = _softmax_rows(logits)
    out = weights @ v
    return (out, weights) if return_weights else out
