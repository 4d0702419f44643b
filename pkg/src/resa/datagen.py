"""Synthetic labeled data and vector-space view augmentations.

Classes are isotropic Gaussian blobs (unit within-class std) in a latent
space, embedded in the ambient space by a fixed random orthonormal map and
optionally bent by a fixed random residual nonlinearity.  Class sizes are
either equal or follow an exponential long-tail profile.

Augmentations stand in for image transforms: additive noise, coordinate
masking (occlusion/crop) and a per-sample scale (photometric jitter).  The
weak mode keeps only the noise.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateSpec
from .matrix_io import load_labels, load_matrix, save_labels, save_matrix  # noqa: F401
from .numerics import as_matrix


@dataclass(frozen=True)
class DatasetSpec:
    n_classes: int = 8
    samples_per_class: int = 256
    ambient_dim: int = 64
    latent_dim: int = 32
    class_separation: float = 3.0
    warp: str = "none"
    imbalance_factor: float = 1.0
    ambient_noise: float = 0.0

    def __post_init__(self):
        if self.warp not in ("none", "mlp"):
            raise DegenerateSpec(f"warp must be 'none' or 'mlp', got {self.warp!r}")
        if min(self.n_classes, self.samples_per_class, self.ambient_dim, self.latent_dim) < 1:
            raise DegenerateSpec("all counts and dims must be >= 1")
        if not 0.0 < self.imbalance_factor <= 1.0:
            raise DegenerateSpec("imbalance_factor must lie in (0, 1]")
        if self.class_separation < 0 or self.ambient_noise < 0:
            raise DegenerateSpec("separation and noise must be non-negative")

    def class_counts(self):
        """Per-class sizes; ``n_c = round(n_max * gamma ** (c / (C - 1)))``."""
        C = self.n_classes
        if C == 1 or self.imbalance_factor == 1.0:
            return np.full(C, self.samples_per_class, dtype=np.int64)
        exps = np.arange(C) / (C - 1)
        counts = np.rint(self.samples_per_class * self.imbalance_factor**exps)
        return np.maximum(counts, 1).astype(np.int64)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class AugmentSpec:
    noise_sigma: float = 0.25
    mask_prob: float = 0.2
    scale_jitter: float = 0.2
    mode: str = "standard"

    def __post_init__(self):
        if self.mode not in ("standard", "weak"):
            raise ValueError(f"mode must be 'standard' or 'weak', got {self.mode!r}")
        if not 0.0 <= self.mask_prob < 1.0:
            raise ValueError(f"mask_prob must lie in [0, 1), got {self.mask_prob}")
        if self.noise_sigma < 0 or self.scale_jitter < 0:
            raise ValueError("noise_sigma and scale_jitter must be non-negative")
        if self.mode == "weak":
            object.__setattr__(self, "mask_prob", 0.0)
            object.__setattr__(self, "scale_jitter", 0.0)

    @classmethod
    def weak(cls, noise_sigma=0.1):
        return cls(noise_sigma=noise_sigma, mode="weak")

    def to_dict(self):
        return asdict(self)


def _class_means(spec, rng):
    C, d = spec.n_classes, spec.latent_dim
    if C == 1:
        return np.zeros((1, d))
    dirs = rng.standard_normal((C, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    gaps = np.linalg.norm(dirs[:, None, :] - dirs[None, :, :], axis=-1)
    min_gap = gaps[~np.eye(C, dtype=bool)].min()
    if min_gap < 1e-12:
        raise DegenerateSpec("latent_dim too small to separate the class means")
    # radius chosen so the closest pair sits exactly class_separation stds apart
    return dirs * (spec.class_separation / min_gap)


def _embedding(spec, rng):
    if spec.latent_dim <= spec.ambient_dim:
        Q, _ = np.linalg.qr(rng.standard_normal((spec.ambient_dim, spec.latent_dim)))
        return Q.T
    return rng.standard_normal((spec.latent_dim, spec.ambient_dim)) / math.sqrt(spec.latent_dim)


def _warp(X, rng):
    d = X.shape[1]
    W1 = rng.standard_normal((d, d)) / math.sqrt(d)
    W2 = rng.standard_normal((d, d)) / math.sqrt(d)
    return X + np.tanh(X @ W1) @ W2


def _draw(spec, rng, heldout_per_class):
    rng_means, rng_embed, rng_warp, rng_samples = rng.spawn(4)
    means = _class_means(spec, rng_means)
    E = _embedding(spec, rng_embed)
    warp_rng_state = rng_warp.bit_generator.state

    def sample(counts):
        y = np.repeat(np.arange(spec.n_classes), counts)
        latent = means[y] + rng_samples.standard_normal((y.size, spec.latent_dim))
        X = latent @ E
        if spec.warp == "mlp":
            # the same fixed nonlinearity for every draw
            rng_warp.bit_generator.state = warp_rng_state
            X = _warp(X, rng_warp)
        if spec.ambient_noise > 0:
            X = X + spec.ambient_noise * rng_samples.standard_normal(X.shape)
        return X, y

    X, y = sample(spec.class_counts())
    heldout = None
    if heldout_per_class:
        heldout = sample(np.full(spec.n_classes, heldout_per_class, dtype=np.int64))
    return X, y, means @ E, heldout


def generate(spec, rng, return_means=False):
    """Draw ``(X, y)``; with ``return_means`` also the ambient class means.

    The means are exact only without warp, where the ambient map is linear.
    """
    X, y, means, _ = _draw(spec, rng, 0)
    if return_means:
        return X, y, means
    return X, y


def generate_with_heldout(spec, rng, heldout_per_class):
    """Training set plus a balanced held-out set from the same class model.

    Returns ``(X, y, X_heldout, y_heldout)``.
    """
    X, y, _, (Xh, yh) = _draw(spec, rng, heldout_per_class)
    return X, y, Xh, yh


def augment(X, spec, rng):
    """One random view of every row of ``X``.

    ``x' = ((x + sigma * noise) * keep) * (1 + u)`` with ``keep`` Bernoulli
    per coordinate and ``u ~ U[-jitter, jitter]`` per sample.
    """
    X = as_matrix(X)
    out = X.copy()
    if spec.noise_sigma > 0:
        out += spec.noise_sigma * rng.standard_normal(X.shape)
    if spec.mask_prob > 0:
        out *= rng.random(X.shape) >= spec.mask_prob
    if spec.scale_jitter > 0:
        out *= 1.0 + rng.uniform(-spec.scale_jitter, spec.scale_jitter, size=(X.shape[0], 1))
    return out

