import numpy as np
import pytest

from resa.datagen import AugmentSpec, DatasetSpec, augment, generate, generate_with_heldout
from resa.errors import DegenerateSpec
from resa.metrics import adjusted_rand_index, kmeans
from resa.numerics import make_rng


def test_default_shapes():
    X, y = generate(DatasetSpec(), make_rng(0))
    assert X.shape == (2048, 64)
    assert np.array_equal(np.bincount(y), np.full(8, 256))


def test_long_tail_counts():
    counts = DatasetSpec(n_classes=10, samples_per_class=200, imbalance_factor=1 / 20).class_counts()
    assert counts[0] == 200
    assert counts[-1] == 10
    assert counts[0] / counts[-1] == 20
    assert np.all(np.diff(counts) <= 0)


def test_spec_validation():
    with pytest.raises(DegenerateSpec):
        DatasetSpec(imbalance_factor=0.0)
    with pytest.raises(DegenerateSpec):
        DatasetSpec(warp="spline")
    with pytest.raises(DegenerateSpec):
        DatasetSpec(n_classes=0)


def test_closest_means_sit_at_separation():
    spec = DatasetSpec(n_classes=6, latent_dim=8, ambient_dim=12, class_separation=4.0)
    _, _, means = generate(spec, make_rng(3), return_means=True)
    gaps = np.linalg.norm(means[:, None] - means[None], axis=-1)
    assert abs(gaps[~np.eye(6, dtype=bool)].min() - 4.0) <= 1e-12


def test_wide_separation_is_trivially_clusterable():
    spec = DatasetSpec(n_classes=5, samples_per_class=60, ambient_dim=16, latent_dim=8, class_separation=10.0)
    X, y = generate(spec, make_rng(1))
    assert adjusted_rand_index(y, kmeans(X, 5, make_rng(2))) >= 0.99


def test_class_means_recovered():
    spec = DatasetSpec(n_classes=3, samples_per_class=2000, ambient_dim=10, latent_dim=4)
    X, y, means = generate(spec, make_rng(4), return_means=True)
    # unit within-class std, so each coordinate of the sample mean is within 3/sqrt(n) w.h.p.
    for c in range(3):
        assert np.max(np.abs(X[y == c].mean(axis=0) - means[c])) <= 3 / np.sqrt(2000) * 1.5


def test_generation_deterministic():
    spec = DatasetSpec(warp="mlp", ambient_noise=0.1)
    a = generate_with_heldout(spec, make_rng(5), 8)
    b = generate_with_heldout(spec, make_rng(5), 8)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert a[2].shape == (64, 64)


def test_heldout_shares_the_class_model():
    spec = DatasetSpec(n_classes=4, samples_per_class=500, ambient_dim=8, latent_dim=8)
    X, y, Xh, yh = generate_with_heldout(spec, make_rng(6), 500)
    for c in range(4):
        gap = np.linalg.norm(X[y == c].mean(axis=0) - Xh[yh == c].mean(axis=0))
        assert gap < 0.5


def test_augment_identity(rng):
    X = rng.standard_normal((10, 4))
    out = augment(X, AugmentSpec(0.0, 0.0, 0.0), rng)
    assert np.array_equal(out, X)


def test_augment_deterministic():
    X = np.arange(12.0).reshape(3, 4)
    spec = AugmentSpec()
    assert np.array_equal(augment(X, spec, make_rng(1)), augment(X, spec, make_rng(1)))


def test_weak_mode_keeps_only_noise():
    spec = AugmentSpec(noise_sigma=0.1, mask_prob=0.5, scale_jitter=0.5, mode="weak")
    assert spec.mask_prob == 0.0 and spec.scale_jitter == 0.0


def test_weak_view_distorts_less(rng):
    X = rng.standard_normal((500, 16))
    weak = augment(X, AugmentSpec.weak(), make_rng(1))
    std = augment(X, AugmentSpec(), make_rng(1))
    assert np.mean((weak - X) ** 2) < np.mean((std - X) ** 2)


def test_augment_spec_validation():
    with pytest.raises(ValueError):
        AugmentSpec(mask_prob=1.0)
    with pytest.raises(ValueError):
        AugmentSpec(noise_sigma=-1.0)


def test_single_class():
    X, y = generate(DatasetSpec(n_classes=1, samples_per_class=10, ambient_dim=4, latent_dim=2), make_rng(0))
    assert X.shape == (10, 4) and np.all(y == 0)


def test_long_tail_hundred_classes():
    spec = DatasetSpec(n_classes=100, samples_per_class=500, imbalance_factor=1 / 20, ambient_dim=8, latent_dim=8)
    _, y = generate(spec, make_rng(0))
    counts = np.bincount(y, minlength=100)
    assert counts.max() / counts.min() == 20
