"""Synthetic key-value memorization: stream pairs through update chunks, then read back.

Recall is the mean cosine similarity between ``f_W(k_i)`` and ``v_i`` over all
stored pairs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .fastweight import apply_fw, init_fast_weight
from .layer import HeadInputs, UpdateHook, ttt_forward
from .numcore import dtype_for, l2_normalize_rows
from .optim import NS_ITERS, RULES, OptimizerState
from .schedule import strided

SPEC_VERSION = "1.0"


@dataclass(frozen=True)
class RecallTask:
    num_pairs: int = 256
    d: int = 32
    dh: int = 64
    nh: int = 1
    chunk: int = 64
    rule: str = "muon"
    lr: float = 0.01
    beta: float = 0.5
    seeds: tuple[int, ...] = (0, 1, 2)
    ns_iters: int = NS_ITERS
    precision: str = "double"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.num_pairs < 1 or self.chunk < 1:
            raise ConfigError("num_pairs and chunk must be >= 1")
        if self.d < 1 or self.dh < 1 or self.nh < 1 or self.d % self.nh:
            raise ConfigError(f"nh={self.nh} must divide d={self.d}")
        if self.rule not in RULES:
            raise ConfigError(f"unknown optimizer rule {self.rule!r}, expected one of {RULES}")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not 0 <= self.beta <= 1:
            raise ConfigError("beta must lie in [0, 1]")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        dtype_for(self.precision)

    @property
    def hd(self) -> int:
        return self.d // self.nh

    @property
    def state_size(self) -> int:
        return 3 * self.nh * self.hd * self.dh

    def schedule(self):
        n = self.num_pairs
        updates = [(b, min(b + self.chunk, n)) for b in range(0, n, self.chunk)]
        return strided(updates, [(0, n)], n)


@dataclass
class RecallReport:
    rule: str
    dh: int
    state_size: int
    seeds: list[int]
    recall: list[float]  # per seed, after all updates
    baseline: list[float]  # per seed, with the untrained fast weight
    mean_recall: float = field(init=False)

    def __post_init__(self):
        self.mean_recall = float(np.mean(self.recall))

    def to_dict(self) -> dict:
        return asdict(self)


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    num = np.sum(a * b, axis=-1)
    den = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    return np.clip(num / np.where(den > 0, den, 1.0), -1.0, 1.0)


def make_pairs(task: RecallTask, rng: np.random.Generator):
    """Unit-norm Gaussian keys and values, shape (nh, num_pairs, hd)."""
    dt = dtype_for(task.precision)
    shape = (task.nh, task.num_pairs, task.hd)
    keys = l2_normalize_rows(rng.standard_normal(shape).astype(dt))
    values = l2_normalize_rows(rng.standard_normal(shape).astype(dt))
    return keys, values


def recall_seed(task: RecallTask, seed: int, on_update: UpdateHook | None = None):
    """Returns ``(recall, baseline, final_read_out)`` for one seed."""
    rng = np.random.default_rng(seed)
    dt = dtype_for(task.precision)
    keys, values = make_pairs(task, rng)
    fw0 = init_fast_weight(task.hd, task.dh, rng, dt, batch=(task.nh,))
    baseline = float(np.mean(cosine_rows(apply_fw(fw0, keys), values)))
    n = task.num_pairs
    inp = HeadInputs(
        q=keys, k=keys, v=values,
        lr=np.full((task.nh, n, 3), task.lr, dtype=dt),
        beta=np.full((task.nh, n), task.beta, dtype=dt),
    )
    state = OptimizerState(task.rule, None, task.ns_iters)
    out = ttt_forward(fw0, inp, task.schedule(), state, on_update)
    return float(np.mean(cosine_rows(out, values))), baseline, out


def run_recall(task: RecallTask, on_update: UpdateHook | None = None) -> RecallReport:
    recall, baseline = [], []
    for seed in task.seeds:
        r, b, _ = recall_seed(task, seed, on_update)
        recall.append(r)
        baseline.append(b)
    return RecallReport(task.rule, task.dh, task.state_size, list(task.seeds), recall, baseline)


def run_optimizer_sweep(base: RecallTask, rules=RULES) -> dict:
    reports = {rule: run_recall(replace(base, rule=rule)) for rule in rules}
    return {
        "spec_version": SPEC_VERSION,
        "task": asdict(base),
        "results": {rule: rep.to_dict() for rule, rep in reports.items()},
    }


def run_state_sweep(base: RecallTask, dh_list) -> dict:
    reports = [run_recall(replace(base, dh=int(dh))) for dh in dh_list]
    return {
        "spec_version": SPEC_VERSION,
        "task": asdict(base),
        "results": [rep.to_dict() for rep in reports],
    }
