"""Self-checks exposed on the command line: gradients, dependency masks, parallel equivalence."""

from __future__ import annotations

import numpy as np

from .attention import WindowSpec, window_mask
from .fastweight import FastWeight, chunk_gradient, fw_loss, init_fast_weight
from .layer import HeadInputs, LayerConfig, init_params, hybrid_forward, layer_forward, ttt_forward
from .numcore import l2_normalize_rows
from .optim import OptimizerState
from .parallel import cp_chunk_update, tp_layer_forward
from .recall import SPEC_VERSION
from .schedule import (ChunkSchedule, blockwise_causal, dependency_mask, nvs_schedule,
                       shifted_blockwise_causal, video_schedule)

GRAD_TOL = 1e-5
GRAD_FLOOR = 1e-6
MASK_TOL = 1e-9
CP_TOL = 1e-10
TP_TOL = 1e-12


def finite_difference_gradient(fw: FastWeight, k, v, lr, step: float = 1e-5):
    """Central differences of the lr-weighted loss, one matrix and one entry at a time."""
    grads = []
    mats = list(fw.matrices())
    for m in range(3):
        g = np.zeros_like(mats[m])
        for idx in np.ndindex(*mats[m].shape):
            plus = [w.copy() for w in mats]
            minus = [w.copy() for w in mats]
            plus[m][idx] += step
            minus[m][idx] -= step
            lp = fw_loss(FastWeight(*plus), k, v, lr[:, m])
            lm = fw_loss(FastWeight(*minus), k, v, lr[:, m])
            g[idx] = (lp - lm) / (2 * step)
        grads.append(g)
    return grads


def gradient_rel_error(analytic, numeric, floor: float = GRAD_FLOOR) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def random_chunk(rng, d, dh, length, dtype=np.float64):
    fw = init_fast_weight(d, dh, rng, dtype)
    k = l2_normalize_rows(rng.standard_normal((length, d)))
    v = rng.standard_normal((length, d))
    lr = rng.uniform(0.1, 1.0, (length, 3))
    return fw, k, v, lr


def gradcheck(seeds=range(20), d: int = 6, dh: int = 8, length: int = 5, step: float = 1e-5) -> dict:
    errors = []
    for seed in seeds:
        fw, k, v, lr = random_chunk(np.random.default_rng(seed), d, dh, length)
        analytic = chunk_gradient(fw, k, v, lr)
        errors.append(gradient_rel_error(analytic, finite_difference_gradient(fw, k, v, lr, step)))
    worst = max(errors)
    return {
        "spec_version": SPEC_VERSION,
        "check": "gradcheck",
        "shape": {"d": d, "dh": dh, "l": length},
        "seeds": list(seeds),
        "rel_errors": errors,
        "max_rel_err": worst,
        "tolerance": GRAD_TOL,
        "pass": bool(worst < GRAD_TOL),
    }


def random_head_inputs(rng, length, hd, nh=1, lr_range=(0.1, 1.0)):
    q = l2_normalize_rows(rng.standard_normal((nh, length, hd)))
    k = l2_normalize_rows(rng.standard_normal((nh, length, hd)))
    v = rng.standard_normal((nh, length, hd))
    lr = rng.uniform(*lr_range, (nh, length, 3))
    beta = rng.uniform(0.0, 1.0, (nh, length))
    return HeadInputs(q, k, v, lr, beta)


def perturbation_mask(fw: FastWeight, inp: HeadInputs, sched: ChunkSchedule, rule: str,
                      rng, tol: float = MASK_TOL) -> np.ndarray:
    """Empirical dependency matrix: does perturbing token j's key/value move output i?"""
    state = OptimizerState(rule)
    ref = ttt_forward(fw, inp, sched, state)
    length = sched.seq_len
    mask = np.zeros((length, length), dtype=bool)
    for j in range(length):
        k = inp.k.copy()
        v = inp.v.copy()
        k[:, j] = l2_normalize_rows(k[:, j] + 0.5 * rng.standard_normal(k[:, j].shape))
        v[:, j] += 0.5 * rng.standard_normal(v[:, j].shape)
        out = ttt_forward(fw, HeadInputs(inp.q, k, v, inp.lr, inp.beta), sched, state)
        mask[:, j] = np.max(np.abs(out - ref), axis=(0, 2)) > tol
    return mask


def mask_schedules() -> dict[str, ChunkSchedule]:
    return {
        "blockwise_causal(12,4)": blockwise_causal(12, 4),
        "blockwise_causal(10,4)": blockwise_causal(10, 4),
        "full(8,8)": blockwise_causal(8, 8),
        "shifted(12,4)": shifted_blockwise_causal(12, 4),
        "shifted(24,6)": shifted_blockwise_causal(24, 6),
        "nvs(8,12)": nvs_schedule(8, 12),
        "video(3,3)": video_schedule(3, 3),
    }


def hybrid_dependency(cfg: LayerConfig, sched: ChunkSchedule, seed: int, tol: float = MASK_TOL) -> np.ndarray:
    """Perturb each input token of a hybrid layer and record which outputs move."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed, hybrid=True)
    # non-zero TTT gate and larger lr so both branches are live
    params.w_head_scale = rng.standard_normal(params.w_head_scale.shape)
    params.w_lr = 0.1 * rng.standard_normal(params.w_lr.shape)
    x = rng.standard_normal((sched.seq_len, cfg.d))
    ref = hybrid_forward(params, cfg, x, sched)
    mask = np.zeros((sched.seq_len, sched.seq_len), dtype=bool)
    for j in range(sched.seq_len):
        xp = x.copy()
        xp[j] += rng.standard_normal(cfg.d)
        mask[:, j] = np.max(np.abs(hybrid_forward(params, cfg, xp, sched) - ref), axis=1) > tol
    return mask


def maskcheck(seed: int = 0, rules=("gd", "momentum", "muon")) -> dict:
    rng = np.random.default_rng(seed)
    cases = []
    for name, sched in mask_schedules().items():
        expected = dependency_mask(sched)
        for rule in rules:
            hd = 4
            fw = init_fast_weight(hd, 6, rng, batch=(1,))
            inp = random_head_inputs(rng, sched.seq_len, hd)
            got = perturbation_mask(fw, inp, sched, rule, rng)
            cases.append({"schedule": name, "rule": rule, "mismatches": int(np.sum(got != expected)),
                          "pass": bool(np.array_equal(got, expected))})

    length, chunk = 12, 4
    sched = shifted_blockwise_causal(length, chunk)
    win = WindowSpec("sliding_causal", chunk)
    causal = np.tril(np.ones((length, length), dtype=bool))
    union = dependency_mask(sched) | window_mask(length, win)
    cases.append({"schedule": "hybrid union (analytic)", "rule": "-",
                  "mismatches": int(np.sum(union != causal)), "pass": bool(np.array_equal(union, causal))})
    cfg = LayerConfig(d=8, nh=2, chunk=chunk, rule="muon", window=win)
    got = hybrid_dependency(cfg, sched, seed)
    cases.append({"schedule": "hybrid layer (perturbation)", "rule": "muon",
                  "mismatches": int(np.sum(got != causal)), "pass": bool(np.array_equal(got, causal))})
    return {
        "spec_version": SPEC_VERSION,
        "check": "maskcheck",
        "tolerance": MASK_TOL,
        "cases": cases,
        "pass": all(c["pass"] for c in cases),
    }


def max_rel_dev(a: FastWeight, b: FastWeight) -> float:
    return max(float(np.max(np.abs(x - y)) / np.max(np.abs(y))) for x, y in zip(a.matrices(), b.matrices()))


def parallel_check(seed: int = 0, shard_counts=(1, 2, 4, 7), chunk: int = 64, d: int = 8, dh: int = 16,
                   tp_shards=(1, 2, 4), rules=("gd", "muon")) -> dict:
    rng = np.random.default_rng(seed)
    fw, k, v, lr = random_chunk(rng, d, dh, chunk)
    cp = []
    for rule in rules:
        state = OptimizerState(rule)
        ref, _ = cp_chunk_update(fw, k, v, lr, 1, state)
        for shards in shard_counts:
            got, _ = cp_chunk_update(fw, k, v, lr, shards, state)
            cp.append({"rule": rule, "shards": shards, "max_rel_dev": max_rel_dev(got, ref)})

    cfg = LayerConfig(d=16, nh=4, r=2, chunk=8, rule="muon")
    params = init_params(cfg, seed)
    x = rng.standard_normal((32, cfg.d))
    sched = cfg.schedule(32)
    ref_out = layer_forward(params, cfg, x, sched)
    tp = []
    for shards in tp_shards:
        out = tp_layer_forward(params, cfg, x, sched, shards)
        tp.append({"head_shards": shards, "max_abs_dev": float(np.max(np.abs(out - ref_out)))})

    worst_cp = max(c["max_rel_dev"] for c in cp)
    worst_tp = max(t["max_abs_dev"] for t in tp)
    return {
        "spec_version": SPEC_VERSION,
        "check": "parallel-check",
        "shards": list(shard_counts),
        "max_rel_dev": worst_cp,
        "cp": cp,
        "tp": tp,
        "max_tp_abs_dev": worst_tp,
        "tolerance": {"cp_rel": CP_TOL, "tp_abs": TP_TOL},
        "pass": bool(worst_cp <= CP_TOL and worst_tp <= TP_TOL),
    }
