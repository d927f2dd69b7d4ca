"""Test-time update rules for fast weights: normalized GD, momentum and Muon.

Per-matrix functions accept a leading batch axis (heads); ``beta_mean`` may then
be an array with one entry per batch element.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .errors import ConfigError, DimensionError
from .fastweight import FastWeight
from .numcore import default_eps

Rule = Literal["gd", "momentum", "muon"]
RULES: tuple[str, ...] = ("gd", "momentum", "muon")

# quintic Newton-Schulz coefficients
MUON_A = 3.4445
MUON_B = -4.7750
MUON_C = 2.0315
NS_ITERS = 5


def ns_scalar_map(s, iters: int = NS_ITERS):
    """What ``iters`` Newton-Schulz steps do to a single singular value in (0, 1]."""
    s = np.asarray(s, dtype=np.float64)
    for _ in range(iters):
        s = MUON_A * s + MUON_B * s**3 + MUON_C * s**5
    return s


def muon_orthogonalize(g: np.ndarray, iters: int = NS_ITERS, eps: float | None = None) -> np.ndarray:
    """Approximate ``U V^T`` of ``g = U S V^T`` by quintic Newton-Schulz iteration.

    ``g`` is first scaled to unit Frobenius norm, so the result is invariant to the
    scale of ``g``. A zero matrix maps to zero.
    """
    if iters < 1:
        raise ConfigError("ns_iters must be >= 1")
    if eps is None:
        eps = default_eps(g.dtype)
    norm = np.linalg.norm(g, axis=(-2, -1), keepdims=True)
    x = g / np.maximum(norm, eps)
    tall = g.shape[-2] > g.shape[-1]
    if tall:
        x = x.swapaxes(-1, -2)
    for _ in range(iters):
        a = x @ x.swapaxes(-1, -2)
        b = MUON_B * a + MUON_C * (a @ a)
        x = MUON_A * x + b @ x
    if tall:
        x = x.swapaxes(-1, -2)
    return x


def weight_update_gd(w: np.ndarray, g: np.ndarray, eps: float | None = None, unit_norm: bool = False) -> np.ndarray:
    """``w - g`` rescaled so every input-dimension slice keeps the norm it had in ``w``.

    With ``unit_norm`` the slices are normalized to 1 instead. Slices of ``w - g``
    whose norm falls below ``eps`` are replaced by the original slice of ``w``.
    """
    if w.shape != g.shape:
        raise DimensionError(f"weight {w.shape} and gradient {g.shape} differ")
    if not np.any(g):
        return w.copy()
    if eps is None:
        eps = default_eps(w.dtype)
    new = w - g
    new_norm = np.linalg.norm(new, axis=-2, keepdims=True)
    target = 1.0 if unit_norm else np.linalg.norm(w, axis=-2, keepdims=True)
    degenerate = new_norm < eps
    out = new / np.where(degenerate, 1.0, new_norm) * target
    return np.where(degenerate, w, out)


def accumulate_momentum(g: np.ndarray, momentum: np.ndarray | None, beta_mean) -> np.ndarray:
    beta = np.asarray(beta_mean, dtype=g.dtype)
    if np.any(beta < 0) or np.any(beta > 1):
        raise ValueError(f"beta_mean must lie in [0, 1], got {beta_mean}")
    if momentum is None:
        return g.copy()
    if beta.ndim:
        beta = beta[..., None, None]
    return beta * momentum + g


def weight_update_momentum(w, g, momentum, beta_mean, eps=None, unit_norm=False):
    """Returns ``(w', M')`` with ``M' = beta_mean * M + g`` and ``w' = weight_update_gd(w, M')``."""
    m = accumulate_momentum(g, momentum, beta_mean)
    return weight_update_gd(w, m, eps, unit_norm), m


def weight_update_muon(w, g, momentum, beta_mean, ns_iters=NS_ITERS, eps=None, unit_norm=False):
    """Returns ``(w', M')`` with ``w' = weight_update_gd(w, muon_orthogonalize(M'))``."""
    m = accumulate_momentum(g, momentum, beta_mean)
    return weight_update_gd(w, muon_orthogonalize(m, ns_iters, eps), eps, unit_norm), m


@dataclass(frozen=True)
class OptimizerState:
    rule: str = "gd"
    momentum: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    ns_iters: int = NS_ITERS
    unit_norm: bool = False

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigError(f"unknown optimizer rule {self.rule!r}, expected one of {RULES}")
        if self.ns_iters < 1:
            raise ConfigError("ns_iters must be >= 1")


def update_fast_weight(fw: FastWeight, grads, state: OptimizerState, beta_mean=0.0):
    """Apply one update rule to each of the three matrices independently.

    Returns the new FastWeight and the new OptimizerState; inputs are not modified.
    """
    mats = fw.matrices()
    if state.rule == "gd":
        new = tuple(weight_update_gd(w, g, unit_norm=state.unit_norm) for w, g in zip(mats, grads))
        return FastWeight(*new), state
    old_m = state.momentum if state.momentum is not None else (None, None, None)
    new_w, new_m = [], []
    for w, g, m in zip(mats, grads, old_m):
        if state.rule == "momentum":
            w2, m2 = weight_update_momentum(w, g, m, beta_mean, unit_norm=state.unit_norm)
        else:
            w2, m2 = weight_update_muon(w, g, m, beta_mean, state.ns_iters, unit_norm=state.unit_norm)
        new_w.append(w2)
        new_m.append(m2)
    return FastWeight(*new_w), replace(state, momentum=tuple(new_m))
