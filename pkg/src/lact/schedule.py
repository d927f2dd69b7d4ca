"""Update/apply execution orders over a token sequence and their dependency masks."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from .errors import ScheduleError


class Mode(str, Enum):
    UPDATE_THEN_APPLY = "update_then_apply"
    APPLY_THEN_UPDATE = "apply_then_update"
    UPDATE_ONLY = "update_only"
    APPLY_ONLY = "apply_only"

    @property
    def updates(self) -> bool:
        return self is not Mode.APPLY_ONLY

    @property
    def applies(self) -> bool:
        return self is not Mode.UPDATE_ONLY


@dataclass(frozen=True)
class ChunkOp:
    mode: Mode
    begin: int
    end: int

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not 0 <= self.begin < self.end:
            raise ScheduleError(f"invalid token range {self.begin}..{self.end}")

    def __len__(self):
        return self.end - self.begin


def _check_disjoint(ranges: list[tuple[int, int]], kind: str):
    ranges = sorted(ranges)
    for (b0, e0), (b1, e1) in zip(ranges, ranges[1:]):
        if b1 < e0:
            raise ScheduleError(f"overlapping {kind} ranges {b0}..{e0} and {b1}..{e1}")


@dataclass(frozen=True)
class ChunkSchedule:
    ops: tuple[ChunkOp, ...]
    seq_len: int

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        for op in self.ops:
            if op.end > self.seq_len:
                raise ScheduleError(f"op {op} runs past seq_len {self.seq_len}")
        updates = [(op.begin, op.end) for op in self.ops if op.mode.updates]
        applies = [(op.begin, op.end) for op in self.ops if op.mode.applies]
        _check_disjoint(updates, "update")
        _check_disjoint(applies, "apply")
        if sum(e - b for b, e in applies) != self.seq_len:
            raise ScheduleError("apply ranges must cover every token exactly once")

    def __iter__(self):
        return iter(self.ops)

    def __len__(self):
        return len(self.ops)

    @property
    def max_update_len(self) -> int:
        return max((len(op) for op in self.ops if op.mode.updates), default=0)

    def to_text(self) -> str:
        """One ``mode begin end`` line per op."""
        return "".join(f"{op.mode.value} {op.begin} {op.end}\n" for op in self.ops)

    @classmethod
    def from_text(cls, text: str, seq_len: int | None = None) -> ChunkSchedule:
        ops = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ScheduleError(f"line {lineno}: expected 'mode begin end', got {line!r}")
            try:
                ops.append(ChunkOp(Mode(parts[0]), int(parts[1]), int(parts[2])))
            except ValueError as exc:
                raise ScheduleError(f"line {lineno}: {exc}") from None
        if seq_len is None:
            seq_len = max((op.end for op in ops), default=0)
        return cls(tuple(ops), seq_len)


def _chunks(seq_len: int, chunk: int):
    if chunk < 1:
        raise ScheduleError("chunk size must be >= 1")
    if seq_len < 1:
        raise ScheduleError("seq_len must be >= 1")
    chunk = min(chunk, seq_len)
    return [(b, min(b + chunk, seq_len)) for b in range(0, seq_len, chunk)]


def blockwise_causal(seq_len: int, chunk: int) -> ChunkSchedule:
    """Update on a chunk, then apply to the same chunk."""
    ops = [ChunkOp(Mode.UPDATE_THEN_APPLY, b, e) for b, e in _chunks(seq_len, chunk)]
    return ChunkSchedule(tuple(ops), seq_len)


def shifted_blockwise_causal(seq_len: int, chunk: int) -> ChunkSchedule:
    """Apply to a chunk, then update on it, so no chunk sees its own tokens."""
    ops = [ChunkOp(Mode.APPLY_THEN_UPDATE, b, e) for b, e in _chunks(seq_len, chunk)]
    return ChunkSchedule(tuple(ops), seq_len)


def strided(update_ranges: Iterable, apply_ranges: Iterable, seq_len: int) -> ChunkSchedule:
    """Separate update_only and apply_only ops merged into one causal order.

    An apply range sees exactly the update ranges that start before it ends, so
    updates on tokens inside or before an apply range run first.
    """
    update_ranges = [tuple(r) for r in update_ranges]
    apply_ranges = [tuple(r) for r in apply_ranges]
    _check_disjoint(update_ranges, "update")
    _check_disjoint(apply_ranges, "apply")
    ops = [ChunkOp(Mode.UPDATE_ONLY, b, e) for b, e in update_ranges]
    ops += [ChunkOp(Mode.APPLY_ONLY, b, e) for b, e in apply_ranges]
    ops.sort(key=lambda op: (op.end, 0) if op.mode is Mode.APPLY_ONLY else (op.begin, 1))
    return ChunkSchedule(tuple(ops), seq_len)


def nvs_schedule(n_input: int, n_total: int) -> ChunkSchedule:
    """Update on the input tokens, then apply to every token."""
    return strided([(0, n_input)], [(0, n_total)], n_total)


def video_schedule(chunk: int, n_chunks: int) -> ChunkSchedule:
    """Interleaved ``[noisy_0, clean_0, noisy_1, clean_1, ...]``; only clean chunks update."""
    updates, applies = [], []
    for i in range(n_chunks):
        noisy = (2 * i * chunk, (2 * i + 1) * chunk)
        clean = ((2 * i + 1) * chunk, (2 * i + 2) * chunk)
        applies += [noisy, clean]
        updates.append(clean)
    return strided(updates, applies, 2 * n_chunks * chunk)


def dependency_mask(sched: ChunkSchedule) -> np.ndarray:
    """``mask[i, j]`` is True iff token j's key/value reached the weights applied to token i."""
    mask = np.zeros((sched.seq_len, sched.seq_len), dtype=bool)
    seen = np.zeros(sched.seq_len, dtype=bool)
    for op in sched:
        if op.mode is Mode.APPLY_THEN_UPDATE or op.mode is Mode.APPLY_ONLY:
            mask[op.begin:op.end] = seen
        if op.mode.updates:
            seen[op.begin:op.end] = True
        if op.mode is Mode.UPDATE_THEN_APPLY:
            mask[op.begin:op.end] = seen
    return mask


def chunk_index(sched: ChunkSchedule) -> np.ndarray:
    """Index of the op that applies to each token."""
    idx = np.full(sched.seq_len, -1)
    for n, op in enumerate(sched):
        if op.mode.applies:
            idx[op.begin:op.end] = n
    return idx
