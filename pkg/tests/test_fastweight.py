import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import swiglu_scalar

from lact.checks import finite_difference_gradient, gradient_rel_error, random_chunk
from lact.errors import DimensionError, NumericError
from lact.fastweight import ChunkTokens, FastWeight, apply_fw, chunk_gradient, fw_loss, init_fast_weight


def small(seed=0, d=4, dh=6, length=3):
    return random_chunk(np.random.default_rng(seed), d, dh, length)


def test_fast_weight_shapes_validated():
    fw = init_fast_weight(4, 6, np.random.default_rng(0))
    assert (fw.d, fw.dh, fw.size) == (4, 6, 72)
    with pytest.raises(DimensionError):
        FastWeight(np.ones((4, 6)), np.ones((4, 6)), np.ones((4, 6)))


def test_init_std_follows_fan_in():
    fw = init_fast_weight(256, 512, np.random.default_rng(1))
    assert abs(fw.w1.std() - 1 / 16) < 3e-3
    assert abs(fw.w3.std() - 1 / 16) < 3e-3
    assert abs(fw.w2.std() - 1 / np.sqrt(512)) < 3e-3
    assert np.all(np.linalg.norm(fw.w1, axis=0) > 0)


def test_init_is_seeded_and_batched():
    a = init_fast_weight(4, 6, np.random.default_rng(5), batch=(3,))
    b = init_fast_weight(4, 6, np.random.default_rng(5), batch=(3,))
    assert a.w1.shape == (3, 4, 6) and a.w2.shape == (3, 6, 4)
    assert all(np.array_equal(x, y) for x, y in zip(a.matrices(), b.matrices()))


def test_apply_zero_input_and_zero_gate():
    fw, k, _, _ = small()
    assert np.array_equal(apply_fw(fw, np.zeros((3, 4))), np.zeros((3, 4)))
    gated = FastWeight(np.zeros_like(fw.w1), fw.w2, fw.w3)
    assert np.array_equal(apply_fw(gated, k), np.zeros_like(k))


def test_apply_matches_scalar_oracle():
    fw, k, _, _ = small(seed=2)
    np.testing.assert_allclose(apply_fw(fw, k), swiglu_scalar(fw.w1, fw.w2, fw.w3, k), atol=1e-12)


def test_apply_shape_mismatch():
    fw, _, _, _ = small()
    with pytest.raises(DimensionError):
        apply_fw(fw, np.ones((3, 5)))


def test_loss_cases():
    fw, k, v, _ = small(seed=3)
    assert fw_loss(fw, k, np.zeros_like(v)) == 0.0
    assert fw_loss(FastWeight(np.zeros_like(fw.w1), fw.w2, fw.w3), k, v) == 0.0
    ref = -sum(float(np.dot(a, b)) for a, b in zip(swiglu_scalar(fw.w1, fw.w2, fw.w3, k), v))
    assert abs(fw_loss(fw, k, v) - ref) < 1e-12


def test_gradient_zero_cases():
    fw, k, v, lr = small(seed=4)
    for g in chunk_gradient(fw, k, v, np.zeros_like(lr)):
        assert not np.any(g)
    for g in chunk_gradient(fw, k, np.zeros_like(v), lr):
        assert not np.any(g)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    fw, k, v, lr = random_chunk(np.random.default_rng(seed), 6, 8, 5)
    assert gradient_rel_error(chunk_gradient(fw, k, v, lr), finite_difference_gradient(fw, k, v, lr)) < 1e-5


def test_lr_columns_map_to_matrices():
    fw, k, v, lr = small(seed=6)
    full = chunk_gradient(fw, k, v, lr)
    for m in range(3):
        only = np.zeros_like(lr)
        only[:, m] = lr[:, m]
        part = chunk_gradient(fw, k, v, only)
        for j in range(3):
            if j == m:
                np.testing.assert_allclose(part[j], full[j], atol=1e-14)
            else:
                assert not np.any(part[j])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 11))
def test_gradient_additive_over_token_partitions(seed, cut):
    fw, k, v, lr = random_chunk(np.random.default_rng(seed), 5, 7, 12)
    whole = chunk_gradient(fw, k, v, lr)
    parts = [chunk_gradient(fw, k[s], v[s], lr[s]) for s in (slice(0, cut), slice(cut, 12))]
    for w, a, b in zip(whole, *parts):
        np.testing.assert_allclose(w, a + b, rtol=0, atol=1e-10)


def test_lr_scaling_scales_gradient():
    fw, k, v, lr = small(seed=7)
    base = chunk_gradient(fw, k, v, lr)
    for alpha in (0.5, 3.0):
        for a, b in zip(chunk_gradient(fw, k, v, alpha * lr), base):
            np.testing.assert_allclose(a, alpha * b, rtol=0, atol=1e-12)


def test_single_token_gradient_is_per_token_gradient():
    # one-token chunk: gradient of -lr_m f(k).v w.r.t. each matrix, checked by differences
    fw, k, v, lr = small(seed=8, length=1)
    assert gradient_rel_error(chunk_gradient(fw, k, v, lr), finite_difference_gradient(fw, k, v, lr)) < 1e-5


def test_gradient_does_not_mutate():
    fw, k, v, lr = small(seed=9)
    before = [w.copy() for w in fw.matrices()]
    chunk_gradient(fw, k, v, lr)
    apply_fw(fw, k)
    assert all(np.array_equal(a, b) for a, b in zip(before, fw.matrices()))


def test_gradient_non_finite_raises():
    fw, k, v, lr = small(seed=10)
    v = v.copy()
    v[0, 0] = np.inf
    with pytest.raises(NumericError), np.errstate(invalid="ignore"):
        chunk_gradient(fw, k, v, lr)


def test_batched_gradient_matches_per_head():
    rng = np.random.default_rng(11)
    fw = init_fast_weight(4, 6, rng, batch=(2,))
    k, v = rng.standard_normal((2, 5, 4)), rng.standard_normal((2, 5, 4))
    lr = rng.uniform(0, 1, (2, 5, 3))
    both = chunk_gradient(fw, k, v, lr)
    for h in range(2):
        one = chunk_gradient(FastWeight(fw.w1[h], fw.w2[h], fw.w3[h]), k[h], v[h], lr[h])
        for a, b in zip(both, one):
            np.testing.assert_allclose(a[h], b, atol=1e-14)


def test_chunk_tokens_validation_and_slice():
    rng = np.random.default_rng(12)
    q = k = v = rng.standard_normal((6, 4))
    tok = ChunkTokens(q, k, v, np.full((6, 3), 0.1))
    assert tok.slice(2, 5).k.shape == (3, 4)
    assert len(tok) == 6
    with pytest.raises(ValueError):
        ChunkTokens(q, k, v, -np.ones((6, 3)))
    with pytest.raises(DimensionError):
        ChunkTokens(q, k, v[:5], np.ones((6, 3)))
    with pytest.raises(DimensionError):
        ChunkTokens(q, k, v, np.ones((6, 2)))
