import math

import numpy as np
import pytest

from poseflux.src.models.attention import AttentionWeights, LoraDelta
from poseflux.src.models.maps import TemperatureMap
from poseflux.src.services.attention import (
    appa_attention,
    attend,
    base_attention,
    softmax,
    softmax_entropy,
    temporal_attention,
    temporal_attention_maps,
)


def _identity(c, heads=1):
    return AttentionWeights(np.eye(c), np.eye(c), np.eye(c), heads)


def _random_lora(rng, c, r):
    return LoraDelta(*(rng.normal(size=(c, r)) for _ in range(3)), *(rng.normal(size=(r, c)) for _ in range(3)))


def test_single_token_identity_weights():
    v = np.array([[0.3, -1.2, 2.0]])
    out = base_attention(v, np.zeros((0, 3)), _identity(3))
    np.testing.assert_allclose(out, v, atol=1e-15)
    assert np.array_equal(base_attention(v, None, _identity(3)), out)


def test_two_token_manual_computation():
    z = np.array([[1.0, 0.0], [0.5, 2.0]])
    out = base_attention(z, np.zeros((0, 2)), _identity(2))
    expected = np.zeros_like(z)
    for i in range(2):
        logits = [float(z[i] @ z[j]) / math.sqrt(2.0) for j in range(2)]
        weights = [math.exp(value) for value in logits]
        total = sum(weights)
        for j in range(2):
            expected[i] += weights[j] / total * z[j]
    np.testing.assert_allclose(out, expected, atol=1e-14)


def test_appearance_tokens_join_keys_and_values():
    z = np.array([[0.0, 0.0]])
    z_a = np.array([[1.0, 2.0]])
    # zero logits everywhere: output is the mean of z and z_a
    np.testing.assert_allclose(base_attention(z, z_a, _identity(2)), [[0.5, 1.0]], atol=1e-15)


def test_softmax_rows_sum_to_one(rng):
    x = rng.normal(size=(2, 5, 4))
    _, cache = attend(x, rng.normal(size=(2, 3, 4)), *(rng.normal(size=(4, 4)) for _ in range(3)), 2)
    np.testing.assert_allclose(cache.probs.sum(axis=-1), 1.0, atol=1e-12)
    assert cache.probs.shape == (2, 2, 5, 8)


def test_channel_mismatch_is_rejected(rng):
    with pytest.raises(ValueError):
        base_attention(rng.normal(size=(3, 4)), rng.normal(size=(2, 5)), AttentionWeights.random(rng, 4))


def test_zero_lora_is_bit_identical_to_base():
    rng = np.random.default_rng(21)
    for _ in range(100):
        c, r = 4, 2
        weights = AttentionWeights.random(rng, c, head_count=2)
        delta = LoraDelta.initial(rng, c, r)
        z, z_a = rng.normal(size=(3, c)), rng.normal(size=(2, c))
        assert np.array_equal(appa_attention(z, z_a, weights, delta), base_attention(z, z_a, weights))


def test_full_rank_cancelling_delta_gives_row_mean_of_values(rng):
    c = 3
    weights = AttentionWeights.random(rng, c)
    zero = np.zeros((c, c))
    delta = LoraDelta(-weights.wq, -weights.wk, zero, np.eye(c), np.eye(c), np.eye(c))
    z, z_a = rng.normal(size=(2, c)), rng.normal(size=(3, c))
    out = appa_attention(z, z_a, weights, delta)
    values = np.concatenate([z, z_a]) @ weights.wv
    np.testing.assert_allclose(out, np.tile(values.mean(axis=0), (2, 1)), atol=1e-12)


def test_random_delta_matches_materialised_weights(rng):
    weights = AttentionWeights.random(rng, 4, head_count=2)
    delta = _random_lora(rng, 4, 2)
    z, z_a = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
    dq, dk, dv = delta.deltas()
    merged = AttentionWeights(weights.wq + dq, weights.wk + dk, weights.wv + dv, 2)
    np.testing.assert_allclose(appa_attention(z, z_a, weights, delta), base_attention(z, z_a, merged), atol=1e-12)


def test_lora_shape_checks(rng):
    with pytest.raises(ValueError):
        LoraDelta(*(np.zeros((4, 5)) for _ in range(3)), *(np.zeros((5, 4)) for _ in range(3)))
    with pytest.raises(ValueError):
        appa_attention(rng.normal(size=(2, 4)), None, AttentionWeights.random(rng, 4), LoraDelta.initial(rng, 3, 2))


def test_lora_initialisation(rng):
    delta = LoraDelta.initial(rng, 8, 4)
    assert not delta.b_q.any() and not delta.b_v.any()
    assert np.abs(delta.a_k).max() <= 0.5


def test_temporal_single_frame_is_value_projection(rng):
    z = rng.normal(size=(2, 4, 1, 3, 2))
    weights = AttentionWeights.random(rng, 4, head_count=2)
    out = temporal_attention(z, weights)
    expected = np.einsum("bcfhw,cd->bdfhw", z, weights.wv)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_temporal_unit_temperature_matches_untempered(rng):
    z = rng.normal(size=(1, 4, 3, 2, 2))
    weights = AttentionWeights.random(rng, 4, head_count=2)
    tempered = temporal_attention(z, weights, TemperatureMap.uniform(2, 2, 1.0))
    np.testing.assert_allclose(tempered, temporal_attention(z, weights), rtol=0, atol=1e-12)


def test_temporal_map_shape_must_match(rng):
    z = rng.normal(size=(1, 4, 3, 2, 2))
    with pytest.raises(ValueError, match="resize"):
        temporal_attention(z, AttentionWeights.random(rng, 4), TemperatureMap.uniform(3, 2))


def test_temporal_locality(rng):
    z = rng.normal(size=(1, 4, 3, 3, 3))
    weights = AttentionWeights.random(rng, 4, head_count=2)
    tmap = TemperatureMap(1.0 + rng.random((3, 3)), tau=1.0)
    before = temporal_attention(z, weights, tmap)
    bumped = z.copy()
    bumped[:, :, :, 1, 2] += rng.normal(size=(1, 4, 3))
    after = temporal_attention(bumped, weights, tmap)
    changed = np.abs(after - before).max(axis=(0, 1, 2)) > 0
    expected = np.zeros((3, 3), dtype=bool)
    expected[1, 2] = True
    assert np.array_equal(changed, expected)


def test_attention_maps_are_row_stochastic(rng):
    z = rng.normal(size=(1, 4, 4, 2, 2))
    weights = AttentionWeights.random(rng, 4)
    tmap = TemperatureMap(np.array([[1.0, 8.0], [1.0, 8.0]]), tau=3.5)
    maps = temporal_attention_maps(z, weights, tmap)
    assert maps.shape == (1, 2, 2, 4, 4)
    np.testing.assert_allclose(maps.sum(axis=-1), 1.0, atol=1e-12)


def test_entropy_non_decreasing_in_temperature():
    rng = np.random.default_rng(8)
    for _ in range(100):
        row = rng.normal(size=6) * 3.0
        for taus in ([1.0, 2.0, 4.0, 8.0], [0.0, 1.0, 3.0, 10.0]):
            entropies = [float(softmax_entropy(row, tau + 1.0)) for tau in taus]
            assert all(a <= b + 1e-12 for a, b in zip(entropies, entropies[1:]))
            assert entropies[0] < entropies[-1]


def test_softmax_handles_large_logits():
    p = softmax(np.array([1000.0, 1000.0, -1000.0]))
    np.testing.assert_allclose(p, [0.5, 0.5, 0.0], atol=1e-15)
