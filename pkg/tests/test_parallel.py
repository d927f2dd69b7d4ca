import numpy as np
import pytest

from lact.checks import max_rel_dev, parallel_check, random_chunk
from lact.errors import ConfigError, PartitionError
from lact.fastweight import chunk_gradient
from lact.layer import LayerConfig, init_params, layer_forward
from lact.optim import OptimizerState, update_fast_weight
from lact.parallel import ShardGroup, all_reduce_sum, cp_chunk_update, gather_scatter, shard, tp_layer_forward


def test_shard_bounds():
    assert ShardGroup(4).bounds(64) == [(0, 16), (16, 32), (32, 48), (48, 64)]
    b = ShardGroup(7).bounds(64)
    assert b[0][0] == 0 and b[-1][1] == 64 and all(e > s for s, e in b)
    assert all(b[i][1] == b[i + 1][0] for i in range(6))
    with pytest.raises(PartitionError):
        ShardGroup(5).bounds(4)
    with pytest.raises(PartitionError):
        ShardGroup(0)


def test_all_reduce_fixed_order():
    parts = [(np.full(2, 0.1),), (np.full(2, 0.2),), (np.full(2, 0.3),)]
    out = all_reduce_sum(parts)
    assert len(out) == 3
    assert all(np.array_equal(o[0], (np.full(2, 0.1) + 0.2) + 0.3) for o in out)
    assert parts[0][0][0] == 0.1


def test_cp_one_shard_is_bitwise():
    fw, k, v, lr = random_chunk(np.random.default_rng(0), 8, 16, 64)
    for rule in ("gd", "momentum", "muon"):
        direct, _ = update_fast_weight(fw, chunk_gradient(fw, k, v, lr), OptimizerState(rule), 0.3)
        got, _ = cp_chunk_update(fw, k, v, lr, 1, OptimizerState(rule), 0.3)
        assert all(np.array_equal(a, b) for a, b in zip(got.matrices(), direct.matrices()))


@pytest.mark.parametrize("shards", [2, 4, 7])
def test_cp_matches_unsharded(shards):
    fw, k, v, lr = random_chunk(np.random.default_rng(shards), 8, 16, 64)
    ref, _ = cp_chunk_update(fw, k, v, lr, 1, OptimizerState("muon"))
    got, _ = cp_chunk_update(fw, k, v, lr, shards, OptimizerState("muon"))
    assert max_rel_dev(got, ref) < 1e-10
    threaded, _ = cp_chunk_update(fw, k, v, lr, shards, OptimizerState("muon"), threads=True)
    assert all(np.array_equal(a, b) for a, b in zip(threaded.matrices(), got.matrices()))


def test_cp_zero_lr_shard_is_null():
    fw, k, v, lr = random_chunk(np.random.default_rng(9), 8, 16, 64)
    lr = lr.copy()
    lr[16:32] = 0
    got, _ = cp_chunk_update(fw, k, v, lr, 4)
    keep = np.r_[0:16, 32:64]
    ref, _ = update_fast_weight(fw, chunk_gradient(fw, k[keep], v[keep], lr[keep]), OptimizerState("gd"))
    assert max_rel_dev(got, ref) < 1e-12


def test_gather_scatter_roundtrip():
    x = np.random.default_rng(1).standard_normal((4, 10, 3))
    seq = shard(x, 1, 3)
    heads = gather_scatter(seq, gather_axis=1, scatter_axis=0)
    assert [h.shape for h in heads] == [(1, 10, 3), (2, 10, 3), (1, 10, 3)]
    back = gather_scatter(heads, gather_axis=0, scatter_axis=1)
    assert all(np.array_equal(a, b) for a, b in zip(back, seq))


@pytest.mark.parametrize("shards", [1, 2, 4])
def test_tp_matches_single_device(shards):
    cfg = LayerConfig(d=16, nh=4, r=2, chunk=8, rule="momentum")
    params = init_params(cfg, shards)
    x = np.random.default_rng(shards).standard_normal((24, 16))
    sched = cfg.schedule(24)
    ref = layer_forward(params, cfg, x, sched)
    got = tp_layer_forward(params, cfg, x, sched, shards)
    if shards == 1:
        assert np.array_equal(got, ref)
    assert np.max(np.abs(got - ref)) < 1e-12


def test_tp_validation():
    cfg = LayerConfig(d=16, nh=4)
    params = init_params(cfg, 0)
    x = np.zeros((8, 16))
    with pytest.raises(ConfigError):
        tp_layer_forward(params, cfg, x, cfg.schedule(8), 3)


def test_parallel_check_report():
    report = parallel_check(seed=2)
    assert report["pass"] and report["shards"] == [1, 2, 4, 7]
    assert report["max_rel_dev"] < 1e-10 and report["max_tp_abs_dev"] < 1e-12
