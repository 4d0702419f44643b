"""Clustering and probing diagnostics for learned features.

* silhouette coefficient (local clustering quality, per point)
* adjusted Rand index over a contingency table (global agreement)
* k-means with k-means++ seeding, used to produce pseudo labels for ARI
* temperature-weighted k-NN on cosine similarity
* a linear softmax probe trained by full-batch gradient descent
"""

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .errors import EmptyInput, KTooLarge, LengthMismatch, ShapeMismatch, SingleCluster
from .numerics import as_matrix, check_normalized, l2_normalize_rows, log_softmax_rows


@dataclass
class MetricsRecord:
    epoch: int = 0
    loss: float = float("nan")
    sc_mean: float = 0.0
    sc_std: float = 0.0
    ari: float = 0.0
    knn_accuracy: float = 0.0
    linear_accuracy: Optional[float] = None
    collapse_min_std: float = 0.0
    assignment_diag_mass: float = 0.0
    lr: float = 0.0

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class KnnConfig:
    k: int = 20
    tau: float = 0.07

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


@dataclass(frozen=True)
class ContingencyTable:
    n_ij: np.ndarray
    a: np.ndarray
    b: np.ndarray
    N: int

    @classmethod
    def from_labels(cls, y_true, y_pred):
        y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
        if y_true.shape != y_pred.shape or y_true.ndim != 1:
            raise LengthMismatch(f"label vectors differ: {y_true.shape} vs {y_pred.shape}")
        _, ti = np.unique(y_true, return_inverse=True)
        _, pi = np.unique(y_pred, return_inverse=True)
        n_ij = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
        np.add.at(n_ij, (ti, pi), 1)
        return cls(n_ij, n_ij.sum(axis=1), n_ij.sum(axis=0), int(y_true.size))


def _pairs(n):
    n = int(n)
    return n * (n - 1) // 2


def adjusted_rand_index(y_true, y_pred):
    """Chance-corrected Rand index, computed in exact rational arithmetic."""
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"label vectors differ in length: {len(y_true)} vs {len(y_pred)}")
    if len(y_true) < 2:
        raise LengthMismatch("need at least two labeled points")
    table = ContingencyTable.from_labels(y_true, y_pred)
    index = sum(_pairs(v) for v in table.n_ij.ravel() if v > 1)
    sum_a = sum(_pairs(v) for v in table.a)
    sum_b = sum(_pairs(v) for v in table.b)
    expected = Fraction(sum_a * sum_b, _pairs(table.N))
    max_index = Fraction(sum_a + sum_b, 2)
    if max_index == expected:
        # both partitions trivial in the same way; agreement is perfect
        return 1.0
    return float((index - expected) / (max_index - expected))


def pairwise_distances(X, metric="euclidean"):
    X = as_matrix(X)
    if metric == "euclidean":
        return cdist(X, X, "euclidean")
    if metric == "cosine":
        Xn = l2_normalize_rows(X)
        return np.clip(1.0 - Xn @ Xn.T, 0.0, 2.0)
    raise ValueError(f"unknown metric {metric!r}")


def silhouette(X, labels, metric="euclidean"):
    """Per-point silhouette values with their mean and standard deviation.

    Points in singleton clusters score 0.
    """
    X = as_matrix(X)
    labels = np.asarray(labels)
    if X.shape[0] == 0:
        raise EmptyInput("no points")
    if labels.shape != (X.shape[0],):
        raise LengthMismatch(f"{labels.shape[0]} labels for {X.shape[0]} points")
    classes, inv = np.unique(labels, return_inverse=True)
    if classes.size < 2:
        raise SingleCluster("silhouette needs at least two distinct labels")

    D = pairwise_distances(X, metric)
    onehot = np.zeros((X.shape[0], classes.size))
    onehot[np.arange(X.shape[0]), inv] = 1.0
    counts = onehot.sum(axis=0)
    sums = D @ onehot
    own = inv
    own_count = counts[own]
    idx = np.arange(X.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sums[idx, own] / (own_count - 1)
        means = sums / counts[None, :]
    means[idx, own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    sc = np.zeros(X.shape[0])
    ok = (own_count > 1) & (denom > 0)
    sc[ok] = (b[ok] - a[ok]) / denom[ok]
    return sc, float(sc.mean()), float(sc.std())


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    first = rng.integers(n)
    centers[0] = X[first]
    closest = cdist(X[first : first + 1], X, "sqeuclidean")[0]
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            pick = rng.choice(n, p=closest / total)
        else:
            pick = rng.integers(n)
        centers[c] = X[pick]
        closest = np.minimum(closest, cdist(X[pick : pick + 1], X, "sqeuclidean")[0])
    return centers


def _lloyd(X, centers, max_iter, tol):
    for _ in range(max_iter):
        D = cdist(X, centers, "sqeuclidean")
        labels = D.argmin(axis=1)
        new = centers.copy()
        for c in range(centers.shape[0]):
            members = labels == c
            if members.any():
                new[c] = X[members].mean(axis=0)
            else:
                # empty cluster: move it onto the worst-served point
                far = D[np.arange(X.shape[0]), labels].argmax()
                new[c] = X[far]
        shift = np.max(np.sum((new - centers) ** 2, axis=1))
        centers = new
        if shift < tol:
            break
    D = cdist(X, centers, "sqeuclidean")
    labels = D.argmin(axis=1)
    inertia = float(D[np.arange(X.shape[0]), labels].sum())
    return labels, centers, inertia


def kmeans_fit(X, k, rng, n_init=10, max_iter=300, tol=1e-8):
    """Best-of-``n_init`` Lloyd runs; returns ``(labels, centers, inertia)``."""
    X = as_matrix(X)
    n = X.shape[0]
    if k > n:
        raise KTooLarge(f"k={k} exceeds the number of points {n}")
    if k < 1:
        raise ValueError("k must be >= 1")
    best = None
    for _ in range(n_init):
        centers = _kmeans_pp(X, k, rng)
        result = _lloyd(X, centers, max_iter, tol)
        if best is None or result[2] < best[2]:
            best = result
    return best


def kmeans(X, k, rng, n_init=10, max_iter=300, tol=1e-8):
    return kmeans_fit(X, k, rng, n_init, max_iter, tol)[0]


def knn_classify(train_X, train_y, test_X, cfg=None, block=1024, exclude_self=False):
    """Weighted vote of the ``k`` most cosine-similar training rows.

    Each neighbour votes with ``exp(sim / tau)``; ties between classes go to
    the smallest class index, ties between neighbours to the smaller
    training index.  With ``exclude_self`` the test rows are the training
    rows and a row never votes for itself (leave-one-out).
    """
    cfg = cfg or KnnConfig()
    train_X, test_X = as_matrix(train_X), as_matrix(test_X)
    train_y = np.asarray(train_y, dtype=np.int64)
    if train_y.shape != (train_X.shape[0],):
        raise LengthMismatch("train labels do not match train rows")
    if exclude_self and test_X.shape != train_X.shape:
        raise ShapeMismatch("exclude_self needs the test rows to be the training rows")
    if cfg.k > train_X.shape[0] - int(exclude_self):
        raise KTooLarge(f"k={cfg.k} exceeds training size {train_X.shape[0]}")
    check_normalized(train_X)
    check_normalized(test_X)
    n_classes = int(train_y.max()) + 1
    preds = np.empty(test_X.shape[0], dtype=np.int64)
    for start in range(0, test_X.shape[0], block):
        sims = test_X[start : start + block] @ train_X.T
        if exclude_self:
            rows = np.arange(sims.shape[0])
            sims[rows, start + rows] = -np.inf
        order = np.argsort(-sims, axis=1, kind="stable")[:, : cfg.k]
        top = np.take_along_axis(sims, order, axis=1)
        weights = np.exp(top / cfg.tau)
        votes = np.zeros((sims.shape[0], n_classes))
        np.add.at(votes, (np.repeat(np.arange(sims.shape[0]), cfg.k), train_y[order].ravel()),
                  weights.ravel())
        preds[start : start + block] = votes.argmax(axis=1)
    return preds


def linear_probe(train_X, train_y, test_X, test_y, rng, epochs=500, lr=0.1):
    """Test accuracy of a softmax classifier on frozen, standardized features."""
    train_X, test_X = as_matrix(train_X), as_matrix(test_X)
    train_y = np.asarray(train_y, dtype=np.int64)
    test_y = np.asarray(test_y, dtype=np.int64)
    if train_y.shape != (train_X.shape[0],) or test_y.shape != (test_X.shape[0],):
        raise LengthMismatch("labels do not match feature rows")
    mu = train_X.mean(axis=0)
    sd = train_X.std(axis=0)
    sd[sd < 1e-12] = 1.0
    Xtr = (train_X - mu) / sd
    Xte = (test_X - mu) / sd
    n, d = Xtr.shape
    n_classes = int(max(train_y.max(), test_y.max())) + 1
    Y = np.zeros((n, n_classes))
    Y[np.arange(n), train_y] = 1.0
    W = 0.01 * rng.standard_normal((d, n_classes))
    b = np.zeros(n_classes)
    for epoch in range(epochs):
        step = lr * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))
        P = np.exp(log_softmax_rows(Xtr @ W + b))
        G = (P - Y) / n
        W -= step * (Xtr.T @ G)
        b -= step * G.sum(axis=0)
    pred = (Xte @ W + b).argmax(axis=1)
    return float(np.mean(pred == test_y))


def embedding_min_std(Z):
    """Smallest per-dimension standard deviation; near zero signals collapse."""
    return float(np.min(np.std(Z, axis=0)))
