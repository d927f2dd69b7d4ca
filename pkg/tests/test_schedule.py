import numpy as np
import pytest

from lact.errors import ScheduleError
from lact.schedule import (ChunkOp, ChunkSchedule, Mode, blockwise_causal, chunk_index, dependency_mask,
                           nvs_schedule, shifted_blockwise_causal, strided, video_schedule)


def ops(sched):
    return [(op.mode.value, op.begin, op.end) for op in sched]


def test_blockwise():
    assert ops(blockwise_causal(8, 4)) == [("update_then_apply", 0, 4), ("update_then_apply", 4, 8)]
    assert ops(blockwise_causal(8, 8)) == [("update_then_apply", 0, 8)]
    assert ops(blockwise_causal(10, 4))[-1] == ("update_then_apply", 8, 10)
    assert ops(blockwise_causal(5, 64)) == [("update_then_apply", 0, 5)]


def test_shifted():
    assert ops(shifted_blockwise_causal(8, 4)) == [("apply_then_update", 0, 4), ("apply_then_update", 4, 8)]
    one = shifted_blockwise_causal(4, 4)
    assert len(one) == 1 and not dependency_mask(one).any()


def test_nvs_and_video_orders():
    assert ops(nvs_schedule(3, 5)) == [("update_only", 0, 3), ("apply_only", 0, 5)]
    assert ops(video_schedule(2, 2)) == [
        ("apply_only", 0, 2), ("update_only", 2, 4), ("apply_only", 2, 4),
        ("apply_only", 4, 6), ("update_only", 6, 8), ("apply_only", 6, 8),
    ]


def test_strided_without_updates_is_static():
    sched = strided([], [(0, 3), (3, 7)], 7)
    assert not dependency_mask(sched).any()
    assert all(op.mode is Mode.APPLY_ONLY for op in sched)


def test_strided_ordering_rule():
    # an update runs before an apply exactly when it starts before the apply ends
    sched = strided([(0, 2), (4, 6)], [(0, 4), (4, 8)], 8)
    assert ops(sched) == [("update_only", 0, 2), ("apply_only", 0, 4), ("update_only", 4, 6), ("apply_only", 4, 8)]


def test_masks_small_cases():
    blk = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [1, 1, 1, 1], [1, 1, 1, 1]], dtype=bool)
    assert np.array_equal(dependency_mask(blockwise_causal(4, 2)), blk)
    shf = np.array([[0, 0, 0, 0], [0, 0, 0, 0], [1, 1, 0, 0], [1, 1, 0, 0]], dtype=bool)
    assert np.array_equal(dependency_mask(shifted_blockwise_causal(4, 2)), shf)
    nvs = dependency_mask(nvs_schedule(2, 4))
    assert nvs[:, :2].all() and not nvs[:, 2:].any()


def test_video_mask():
    m = dependency_mask(video_schedule(1, 3))  # tokens: n0 c0 n1 c1 n2 c2
    expected = np.zeros((6, 6), dtype=bool)
    for i in range(6):
        for j in (1, 3, 5):  # clean tokens only
            if j <= i:
                expected[i, j] = True
    assert np.array_equal(m, expected)


def test_validation():
    with pytest.raises(ScheduleError):
        ChunkOp("update_only", 3, 3)
    with pytest.raises(ValueError):
        ChunkOp("bogus", 0, 1)
    with pytest.raises(ScheduleError):
        ChunkSchedule((ChunkOp("update_then_apply", 0, 4), ChunkOp("update_then_apply", 2, 6)), 6)
    with pytest.raises(ScheduleError):
        ChunkSchedule((ChunkOp("update_then_apply", 0, 4),), 6)
    with pytest.raises(ScheduleError):
        ChunkSchedule((ChunkOp("apply_only", 0, 8),), 6)
    with pytest.raises(ScheduleError):
        blockwise_causal(8, 0)


def test_text_roundtrip():
    sched = video_schedule(2, 3)
    assert ChunkSchedule.from_text(sched.to_text()) == sched
    parsed = ChunkSchedule.from_text("# two chunks\nupdate_then_apply 0 4\nupdate_then_apply 4 6  # tail\n")
    assert parsed == blockwise_causal(6, 4)
    with pytest.raises(ScheduleError):
        ChunkSchedule.from_text("update_only 0\n")


def test_chunk_index_and_max_len():
    sched = blockwise_causal(10, 4)
    assert chunk_index(sched).tolist() == [0] * 4 + [1] * 4 + [2] * 2
    assert sched.max_update_len == 4
    assert strided([], [(0, 5)], 5).max_update_len == 0
