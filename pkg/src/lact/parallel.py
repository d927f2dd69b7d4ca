"""Simulated context parallelism (tokens of a chunk sharded) and tensor parallelism (heads sharded).

Devices are simulated in-process. Every collective reduces or concatenates in
ascending shard order, so results are reproducible bit for bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PartitionError
from .fastweight import FastWeight, chunk_gradient
from .layer import HeadInputs, LayerConfig, LayerParams, merge_heads, project, ttt_forward
from .numcore import rms_norm
from .optim import OptimizerState, update_fast_weight
from .schedule import ChunkSchedule


@dataclass(frozen=True)
class ShardGroup:
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise PartitionError("shard group needs at least one device")

    def bounds(self, length: int) -> list[tuple[int, int]]:
        """Contiguous, possibly uneven split of ``length`` items; every shard nonempty."""
        if length < self.size:
            raise PartitionError(f"cannot split {length} tokens over {self.size} shards without an empty shard")
        edges = np.linspace(0, length, self.size + 1).round().astype(int)
        return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def all_reduce_sum(per_shard: list) -> list:
    """Sum a list of per-shard tuples of arrays, left to right; every shard gets the total."""
    total = [g.copy() for g in per_shard[0]]
    for grads in per_shard[1:]:
        for acc, g in zip(total, grads):
            acc += g
    return [tuple(total) for _ in per_shard]


def cp_chunk_update(fw: FastWeight, k, v, lr, shards: int, state: OptimizerState | None = None,
                    beta_mean=0.0, threads: bool = False):
    """One chunk update with the chunk's tokens sharded over ``shards`` simulated devices.

    Each shard computes its local gradient, the gradients are all-reduce-summed and
    the update rule is applied once. Returns ``(FastWeight, OptimizerState)``.
    """
    if state is None:
        state = OptimizerState("gd")
    group = ShardGroup(shards)
    bounds = group.bounds(k.shape[-2])

    def local(bound):
        b, e = bound
        return chunk_gradient(fw, k[..., b:e, :], v[..., b:e, :], lr[..., b:e, :])

    if threads and shards > 1:
        with ThreadPoolExecutor(max_workers=shards) as pool:
            local_grads = list(pool.map(local, bounds))
    else:
        local_grads = [local(bd) for bd in bounds]
    grads = all_reduce_sum(local_grads)[0]
    return update_fast_weight(fw, grads, state, beta_mean)


def shard(x: np.ndarray, axis: int, size: int) -> list[np.ndarray]:
    bounds = ShardGroup(size).bounds(x.shape[axis])
    return [np.take(x, np.arange(b, e), axis=axis) for b, e in bounds]


def gather_scatter(per_device: list[np.ndarray], gather_axis: int, scatter_axis: int) -> list[np.ndarray]:
    """All-gather along ``gather_axis`` then keep this device's slice of ``scatter_axis``.

    E.g. per-device (nh, L_local, c) with gather 1 / scatter 0 becomes (nh_local, L, c).
    The scatter split is contiguous and may be uneven, matching ``shard``.
    """
    full = np.concatenate(per_device, axis=gather_axis)
    bounds = ShardGroup(len(per_device)).bounds(full.shape[scatter_axis])
    return [np.take(full, np.arange(b, e), axis=scatter_axis) for b, e in bounds]


def tp_layer_forward(params: LayerParams, cfg: LayerConfig, x: np.ndarray, sched: ChunkSchedule,
                     head_shards: int) -> np.ndarray:
    """Plain layer forward with TTT heads sharded over ``head_shards`` simulated devices.

    Inputs arrive sequence-sharded; each device projects its tokens, q/k/v/lr are
    re-laid out to (local heads, full sequence), every device runs the TTT for its
    heads, and the output is re-laid out back to sequence shards before the output
    projection.
    """
    if head_shards < 1 or cfg.nh % head_shards:
        raise ConfigError(f"head_shards={head_shards} must divide nh={cfg.nh}")
    if sched.seq_len != x.shape[0]:
        raise ConfigError("schedule length does not match input")
    x = np.asarray(x, dtype=cfg.dtype)
    per_head = cfg.nh // head_shards
    x_shards = shard(x, 0, head_shards)

    local = [project(params, cfg, xs) for xs in x_shards]

    # sequence-sharded (nh, L_local, ...) -> head-sharded (nh_local, L, ...)
    fields = ("q", "k", "v", "lr", "beta")
    streams = {f: gather_scatter([getattr(dev, f) for dev in local], gather_axis=1, scatter_axis=0)
               for f in fields}

    outs = []
    for rank in range(head_shards):
        heads = slice(rank * per_head, (rank + 1) * per_head)
        fw = FastWeight(params.fw0.w1[heads], params.fw0.w2[heads], params.fw0.w3[heads])
        inp = HeadInputs(**{f: streams[f][rank] for f in fields})
        outs.append(rms_norm(ttt_forward(fw, inp, sched, cfg.optimizer_state())))

    # reverse: gather heads, scatter sequence
    o_shards = gather_scatter(outs, gather_axis=0, scatter_axis=1)
    return np.concatenate([merge_heads(o) @ params.w_out for o in o_shards], axis=0)
