"""Compute-to-memory model, state-size and FLOP accounting, and a chunk-size throughput benchmark."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from statistics import median

import numpy as np
from threadpoolctl import threadpool_limits

from .fastweight import apply_fw, chunk_gradient, init_fast_weight
from .numcore import dtype_for, l2_normalize_rows
from .optim import NS_ITERS, OptimizerState, update_fast_weight

# bf16 accounting, independent of the precision actually used for timing
BYTES_PER_ELEMENT = 2
# 2 matmuls forward on keys, 4 for the gradients, 3 forward on queries
MATMULS_PER_TOKEN = 9


def _as_int(x: Fraction, what: str) -> int:
    if x.denominator != 1:
        raise ValueError(f"{what} = {x} is not an integer")
    return int(x)


def compute_memory_ratio(h: int, b: int) -> Fraction:
    """FLOPs per byte of one (b x h) @ (h x h) product with bf16 operands: 2h^2 b / (2h^2 + 4hb)."""
    if h < 1 or b < 1:
        raise ValueError("h and b must be >= 1")
    return Fraction(2 * h * h * b, BYTES_PER_ELEMENT * (h * h + 2 * h * b))


def state_size(d: int, nh: int, r) -> int:
    """Reals held by one layer's fast weights: nh heads of (hd x dh, dh x hd, hd x dh)."""
    if d % nh:
        raise ValueError(f"nh={nh} must divide d={d}")
    hd = d // nh
    dh = _as_int(Fraction(hd) * Fraction(r), "hidden size hd*r")
    return 3 * nh * hd * dh


def ttt_flops(n: int, d: int, nh: int, r) -> int:
    """FLOPs for update plus apply over n tokens: 18 n (d^2 / nh) r."""
    return _as_int(18 * n * Fraction(d * d, nh) * Fraction(r), "ttt flops")


def muon_flops(nh: int, hd: int, r, iters: int = NS_ITERS) -> int:
    """Newton-Schulz cost for all heads: iters * nh * hd^3 * (4r + 2)."""
    return _as_int(iters * nh * hd**3 * (4 * Fraction(r) + 2), "muon flops")


def chunk_bytes(hidden: int, chunk: int, r=1) -> int:
    """Modelled bytes moved by the nine per-chunk matmuls (weights, inputs and outputs)."""
    dh = _as_int(Fraction(hidden) * Fraction(r), "hidden size")
    return MATMULS_PER_TOKEN * BYTES_PER_ELEMENT * (hidden * dh + chunk * hidden + chunk * dh)


@dataclass
class PerfPoint:
    chunk: int
    hidden: int
    flops: int
    bytes: int
    ratio: float
    measured_gflops: float = float("nan")
    utilization_fraction: float = float("nan")


CSV_COLUMNS = [f.name for f in fields(PerfPoint)]


def analytic_point(hidden: int, chunk: int, r=1) -> PerfPoint:
    flops = ttt_flops(chunk, hidden, 1, r)
    nbytes = chunk_bytes(hidden, chunk, r)
    return PerfPoint(chunk, hidden, flops, nbytes, float(Fraction(flops, nbytes)))


def _timed(fn, min_time: float) -> float:
    """Seconds per call, repeating until one sample spans at least ``min_time``."""
    reps = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        elapsed = time.perf_counter() - t0
        if elapsed >= min_time:
            return elapsed / reps
        reps *= 2 if elapsed <= 0 else max(2, int(np.ceil(min_time / elapsed)))


def peak_gflops(hidden: int, precision: str = "single", min_time: float = 0.05, samples: int = 5) -> float:
    """Best-case square matmul throughput, used as the utilization denominator."""
    n = max(hidden, 1024)
    a = np.random.default_rng(0).standard_normal((n, n)).astype(dtype_for(precision))
    a @ a
    t = median(_timed(lambda: a @ a, min_time) for _ in range(samples))
    return 2 * n**3 / t / 1e9


def throughput_bench(hidden: int = 512, chunk_sizes=(16, 64, 256, 1024, 4096), r=1, precision: str = "single",
                     samples: int = 5, min_time: float = 0.05, threads: int | None = 1, seed: int = 0):
    """Measured update+apply GFLOP/s per chunk size for one head of size ``hidden``.

    Timing is the median of ``samples`` runs after one warm-up call. ``threads=None``
    leaves the BLAS thread pool at its platform default.
    """
    chunk_sizes = list(chunk_sizes)
    if chunk_sizes != sorted(chunk_sizes):
        raise ValueError("chunk_sizes must be ascending")
    dt = dtype_for(precision)
    rng = np.random.default_rng(seed)
    dh = _as_int(Fraction(hidden) * Fraction(r), "hidden size")
    fw = init_fast_weight(hidden, dh, rng, dt)
    state = OptimizerState("gd")
    points = []
    with threadpool_limits(limits=threads):
        peak = peak_gflops(hidden, precision, min_time, samples)
        for b in chunk_sizes:
            k = l2_normalize_rows(rng.standard_normal((b, hidden)).astype(dt))
            q = l2_normalize_rows(rng.standard_normal((b, hidden)).astype(dt))
            v = rng.standard_normal((b, hidden)).astype(dt)
            lr = np.full((b, 3), 0.01, dtype=dt)

            def step():
                grads = chunk_gradient(fw, k, v, lr)
                new_fw, _ = update_fast_weight(fw, grads, state)
                return apply_fw(new_fw, q)

            step()
            t = median(_timed(step, min_time) for _ in range(samples))
            p = analytic_point(hidden, b, r)
            p.measured_gflops = p.flops / t / 1e9
            p.utilization_fraction = p.measured_gflops / peak
            points.append(p)
    return points


def to_csv(points) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for p in sorted(points, key=lambda p: p.chunk):
        writer.writerow(asdict(p))
    return buf.getvalue()
