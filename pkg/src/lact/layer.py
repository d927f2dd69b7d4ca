"""Multi-head large-chunk TTT layer, plain and with in-layer window attention.

Batch size is one: ``x`` has shape (L, d). Per-head tensors are stacked on a
leading head axis, e.g. q of shape (nh, L, hd).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .attention import WindowSpec, multihead_window_attention
from .errors import ConfigError, DimensionError, NumericError
from .fastweight import FastWeight, apply_fw, chunk_gradient, init_fast_weight
from .numcore import dtype_for, inverse_softplus, l2_normalize_rows, rms_norm, sigmoid, silu, softplus
from .optim import NS_ITERS, RULES, OptimizerState, update_fast_weight
from .schedule import ChunkSchedule, Mode, blockwise_causal, shifted_blockwise_causal

PROJ_STD = 0.02
DEFAULT_LR = 0.01


@dataclass(frozen=True)
class LayerConfig:
    d: int = 64
    nh: int = 4
    r: float = 1.0
    chunk: int = 64
    rule: str = "muon"
    const_lr_bias: float = field(default_factory=lambda: inverse_softplus(DEFAULT_LR))
    window: WindowSpec | None = None
    precision: str = "double"
    ns_iters: int = NS_ITERS
    unit_norm: bool = False

    def __post_init__(self):
        if self.d < 1 or self.nh < 1 or self.d % self.nh:
            raise ConfigError(f"nh={self.nh} must divide d={self.d}")
        if self.r <= 0:
            raise ConfigError("r must be positive")
        if abs(self.hd * self.r - round(self.hd * self.r)) > 1e-9 or round(self.hd * self.r) < 1:
            raise ConfigError(f"hidden size hd*r = {self.hd * self.r} is not a positive integer")
        if self.chunk < 1:
            raise ConfigError("chunk must be >= 1")
        if self.rule not in RULES:
            raise ConfigError(f"unknown optimizer rule {self.rule!r}")
        dtype_for(self.precision)

    @property
    def hd(self) -> int:
        return self.d // self.nh

    @property
    def dh(self) -> int:
        return int(round(self.hd * self.r))

    @property
    def dtype(self):
        return dtype_for(self.precision)

    @property
    def state_size(self) -> int:
        return 3 * self.nh * self.hd * self.dh

    def schedule(self, seq_len: int) -> ChunkSchedule:
        """Shifted (causal) chunks for the hybrid layer, plain block-wise chunks otherwise."""
        if self.window is not None:
            return shifted_blockwise_causal(seq_len, self.chunk)
        return blockwise_causal(seq_len, self.chunk)

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(self.rule, None, self.ns_iters, self.unit_norm)


@dataclass
class LayerParams:
    w_qkv: np.ndarray  # (d, 3d)
    w_lr: np.ndarray  # (d, 3 nh)
    w_beta: np.ndarray  # (d, nh)
    w_out: np.ndarray  # (d, d)
    fw0: FastWeight  # matrices of shape (nh, hd, dh) / (nh, dh, hd)
    q_scale: np.ndarray | None = None
    q_shift: np.ndarray | None = None
    k_scale: np.ndarray | None = None
    k_shift: np.ndarray | None = None
    w_head_scale: np.ndarray | None = None  # (d, nh)


def init_params(cfg: LayerConfig, seed: int = 0, hybrid: bool | None = None) -> LayerParams:
    if hybrid is None:
        hybrid = cfg.window is not None
    rng = np.random.default_rng(seed)
    dt = cfg.dtype
    d, nh = cfg.d, cfg.nh
    params = LayerParams(
        w_qkv=(rng.standard_normal((d, 3 * d)) * PROJ_STD).astype(dt),
        w_lr=np.zeros((d, 3 * nh), dtype=dt),
        w_beta=(rng.standard_normal((d, nh)) * PROJ_STD).astype(dt),
        w_out=(rng.standard_normal((d, d)) * PROJ_STD).astype(dt),
        fw0=init_fast_weight(cfg.hd, cfg.dh, rng, dt, batch=(nh,)),
    )
    if hybrid:
        params.q_scale = np.ones(d, dtype=dt)
        params.q_shift = np.zeros(d, dtype=dt)
        params.k_scale = np.ones(d, dtype=dt)
        params.k_shift = np.zeros(d, dtype=dt)
        params.w_head_scale = np.zeros((d, nh), dtype=dt)
    return params


def split_heads(x: np.ndarray, nh: int) -> np.ndarray:
    """(L, nh*c) -> (nh, L, c)."""
    length = x.shape[0]
    # contiguous so BLAS sees the same layout however the heads were produced
    return np.ascontiguousarray(x.reshape(length, nh, -1).transpose(1, 0, 2))


def merge_heads(x: np.ndarray) -> np.ndarray:
    """(nh, L, c) -> (L, nh*c)."""
    nh, length, c = x.shape
    return x.transpose(1, 0, 2).reshape(length, nh * c)


@dataclass
class HeadInputs:
    """Per-head TTT inputs: q, k, v (nh, L, hd); lr (nh, L, 3); beta (nh, L)."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    lr: np.ndarray
    beta: np.ndarray


def _check_input(cfg: LayerConfig, x: np.ndarray, sched: ChunkSchedule | None):
    if x.ndim != 2 or x.shape[1] != cfg.d:
        raise DimensionError(f"x has shape {x.shape}, expected (L, {cfg.d})")
    if sched is not None and sched.seq_len != x.shape[0]:
        raise DimensionError(f"schedule covers {sched.seq_len} tokens but x has {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite input")


def lr_and_beta(params: LayerParams, cfg: LayerConfig, x: np.ndarray):
    lr = softplus(x @ params.w_lr + cfg.const_lr_bias)
    lr = split_heads(lr, cfg.nh)  # columns grouped (nh 3)
    beta = np.ascontiguousarray(sigmoid(x @ params.w_beta).T)
    return lr, beta


def project(params: LayerParams, cfg: LayerConfig, x: np.ndarray) -> HeadInputs:
    """Token projections of the plain layer: SiLU on q, k, v, unit-norm q and k."""
    qkv = silu(x @ params.w_qkv)
    q, k, v = (split_heads(t, cfg.nh) for t in np.split(qkv, 3, axis=-1))
    lr, beta = lr_and_beta(params, cfg, x)
    return HeadInputs(l2_normalize_rows(q), l2_normalize_rows(k), v, lr, beta)


def chunk_beta_mean(params: LayerParams, x_chunk: np.ndarray) -> np.ndarray:
    """Per-head momentum: mean over the chunk of sigmoid(x @ w_beta)."""
    if x_chunk.shape[0] == 0:
        raise ValueError("empty chunk")
    return sigmoid(x_chunk @ params.w_beta).mean(axis=0)


UpdateHook = Callable[[int, FastWeight, FastWeight], None]


def ttt_forward(
    fw: FastWeight,
    inp: HeadInputs,
    sched: ChunkSchedule,
    state: OptimizerState,
    on_update: UpdateHook | None = None,
) -> np.ndarray:
    """Run a schedule of update/apply ops; returns the raw read-out (nh, L, hd).

    ``fw`` is never mutated; each update builds a new FastWeight. ``on_update`` is
    called as ``on_update(op_index, before, after)``.
    """
    out = np.zeros(inp.v.shape, dtype=np.result_type(inp.q, fw.w2))
    for n, op in enumerate(sched):
        b, e = op.begin, op.end
        try:
            if op.mode is Mode.APPLY_THEN_UPDATE or op.mode is Mode.APPLY_ONLY:
                out[:, b:e] = apply_fw(fw, inp.q[:, b:e])
            if op.mode.updates:
                grads = chunk_gradient(fw, inp.k[:, b:e], inp.v[:, b:e], inp.lr[:, b:e])
                new_fw, state = update_fast_weight(fw, grads, state, inp.beta[:, b:e].mean(axis=-1))
                if on_update is not None:
                    on_update(n, fw, new_fw)
                fw = new_fw
            if op.mode is Mode.UPDATE_THEN_APPLY:
                out[:, b:e] = apply_fw(fw, inp.q[:, b:e])
        except NumericError as exc:
            raise NumericError(f"chunk {n} ({op.mode.value} {b}..{e}): {exc}") from None
        if not np.all(np.isfinite(out[:, b:e])):
            raise NumericError(f"chunk {n} ({op.mode.value} {b}..{e}): non-finite output")
    return out


def head_outputs(params: LayerParams, cfg: LayerConfig, x: np.ndarray, sched: ChunkSchedule) -> np.ndarray:
    """Per-head output of the plain layer after RMSNorm, before concatenation."""
    x = np.asarray(x, dtype=cfg.dtype)
    _check_input(cfg, x, sched)
    inp = project(params, cfg, x)
    return rms_norm(ttt_forward(params.fw0, inp, sched, cfg.optimizer_state()))


def layer_forward(params: LayerParams, cfg: LayerConfig, x: np.ndarray, sched: ChunkSchedule) -> np.ndarray:
    return merge_heads(head_outputs(params, cfg, x, sched)) @ params.w_out


def check_window_covers_chunks(cfg: LayerConfig, sched: ChunkSchedule):
    """A sliding window shorter than a shifted chunk leaves tokens no branch can see."""
    win = cfg.window
    shifted = any(op.mode is Mode.APPLY_THEN_UPDATE for op in sched)
    if shifted and win is not None and win.kind == "sliding_causal" and win.window < sched.max_update_len:
        raise ConfigError(
            f"sliding window {win.window} is shorter than the shifted chunk size {sched.max_update_len}"
        )


def hybrid_forward(params: LayerParams, cfg: LayerConfig, x: np.ndarray, sched: ChunkSchedule,
                   return_branches: bool = False):
    """TTT and window attention sharing one QKV projection, outputs summed.

    With ``return_branches`` also returns ``(attn_o, lact_o)`` before the output projection.
    """
    if cfg.window is None:
        raise ConfigError("hybrid layer needs cfg.window")
    if params.w_head_scale is None:
        raise ConfigError("params were initialized without the hybrid extras")
    x = np.asarray(x, dtype=cfg.dtype)
    _check_input(cfg, x, sched)
    check_window_covers_chunks(cfg, sched)

    q, k, v = np.split(x @ params.w_qkv, 3, axis=-1)
    attn_q = q * params.q_scale + params.q_shift
    attn_k = k * params.k_scale + params.k_shift
    attn_o = multihead_window_attention(attn_q, attn_k, v, cfg.window, cfg.nh)

    tq = l2_normalize_rows(silu(split_heads(q, cfg.nh)))
    tk = l2_normalize_rows(silu(split_heads(k, cfg.nh)))
    lr, beta = lr_and_beta(params, cfg, x)
    inp = HeadInputs(tq, tk, split_heads(v, cfg.nh), lr, beta)
    lact_o = rms_norm(ttt_forward(params.fw0, inp, sched, cfg.optimizer_state()))
    scale = silu(x @ params.w_head_scale).T[:, :, None]
    lact_o = merge_heads(lact_o * scale)

    out = (attn_o + lact_o) @ params.w_out
    if return_branches:
        return out, attn_o, lact_o
    return out


def with_fast_weight(params: LayerParams, fw0: FastWeight) -> LayerParams:
    return replace(params, fw0=fw0)
