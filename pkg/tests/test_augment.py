import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rerankmatch.augment import (AugmentPolicy, augment_batch, default_policies, strong_augment,
                                 weak_augment)
from rerankmatch.errors import ConfigError


def images(n=6, size=8, seed=0):
    return np.random.default_rng(seed).uniform(size=(n, size, size))


def test_identity_policy():
    x = images()
    v = np.random.default_rng(1).normal(size=(5, 3))
    identity = AugmentPolicy()
    assert np.array_equal(augment_batch(x, np.random.default_rng(0), identity), x)
    assert np.array_equal(augment_batch(v, np.random.default_rng(0), identity), v)
    assert np.array_equal(augment_batch(x, np.random.default_rng(0), AugmentPolicy("strong")), x)


def test_forced_flip_is_involution():
    x = images(1)[0]
    flip = AugmentPolicy(flip_prob=1.0)
    once = weak_augment(x, np.random.default_rng(0), flip)
    assert np.array_equal(once, x[:, ::-1])
    assert np.array_equal(weak_augment(once, np.random.default_rng(1), flip), x)


def test_flip_frequency():
    x = np.tile(np.arange(4.0), (10_000, 4, 1))
    out = augment_batch(x, np.random.default_rng(2), AugmentPolicy(flip_prob=0.5))
    rate = np.mean(out[:, 0, 0] == 3.0)
    assert abs(rate - 0.5) < 0.02


@pytest.mark.parametrize("data", [images(), np.random.default_rng(3).normal(size=(8, 5))])
def test_deterministic_given_seed(data):
    weak, strong = default_policies(data)
    for policy in (weak, strong):
        a = augment_batch(data, np.random.default_rng(9), policy)
        b = augment_batch(data, np.random.default_rng(9), policy)
        assert np.array_equal(a, b)


def test_shift_stays_within_reflect_padding():
    x = images(50, seed=4)
    out = augment_batch(x, np.random.default_rng(5), AugmentPolicy(shift_max=2))
    padded = np.pad(x, ((0, 0), (2, 2), (2, 2)), mode="reflect")
    for i in range(50):
        windows = [padded[i, r:r + 8, c:c + 8] for r in range(5) for c in range(5)]
        assert any(np.array_equal(out[i], w) for w in windows)


def test_cutout_full_fills_mean():
    x = images()
    weak, strong = default_policies(x, shift_max=0, flip_prob=0.0, jitter_scale=0.0, cutout_frac=1.0)
    out = augment_batch(x, np.random.default_rng(0), strong)
    np.testing.assert_array_equal(out, x.mean())


def test_cutout_square_size():
    x = np.ones((20, 12, 12))
    strong = AugmentPolicy("strong", cutout_frac=0.25, fill_value=0.0)
    out = augment_batch(x, np.random.default_rng(0), strong)
    assert np.all((out == 0).sum(axis=(1, 2)) == 36)


def test_vector_cutout_segment():
    x = np.ones((10, 8))
    out = augment_batch(x, np.random.default_rng(0), AugmentPolicy("strong", cutout_frac=0.25, fill_value=-1.0))
    for row in out:
        hit = np.flatnonzero(row == -1.0)
        assert hit.size == 2 and hit[1] - hit[0] == 1


def test_strong_with_zero_knobs_equals_weak():
    x = images()
    weak, _ = default_policies(x)
    strong = AugmentPolicy("strong", shift_max=weak.shift_max, flip_prob=weak.flip_prob,
                           noise_sigma=weak.noise_sigma, fill_value=weak.fill_value,
                           value_range=weak.value_range)
    a = augment_batch(x, np.random.default_rng(3), weak)
    b = augment_batch(x, np.random.default_rng(3), strong)
    assert np.array_equal(a, b)
    assert np.array_equal(strong_augment(x[0], np.random.default_rng(4), weak),
                          weak_augment(x[0], np.random.default_rng(4), weak))


def test_jitter_clipped_to_range():
    x = images(30)
    _, strong = default_policies(x, jitter_scale=0.9, cutout_frac=0.0)
    out = augment_batch(x, np.random.default_rng(6), strong)
    assert out.min() >= x.min() and out.max() <= x.max()


def test_weak_policy_rejects_strong_knobs():
    with pytest.raises(ConfigError):
        AugmentPolicy("weak", cutout_frac=0.2)
    with pytest.raises(ConfigError):
        AugmentPolicy(flip_prob=1.5)


def test_noise_sigma_relative_to_feature_std():
    x = np.random.default_rng(7).normal(scale=[1.0, 3.0], size=(4000, 2))
    weak, _ = default_policies(x, noise_scale=0.1)
    assert weak.noise_sigma == pytest.approx(0.2, rel=0.05)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_shape_and_finiteness_preserved(seed, as_image):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(5, 9, 7)) if as_image else rng.normal(size=(5, 6))
    _, strong = default_policies(x)
    for policy in (strong.weak(), strong):
        out = augment_batch(x, rng, policy)
        assert out.shape == x.shape and np.all(np.isfinite(out))
