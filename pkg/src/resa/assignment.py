"""Sinkhorn-Knopp self-assignment.

The square routine follows the classic recipe used for online clustering
in self-supervised learning: exponentiate the similarity matrix, run ``T``
alternating row/column rescalings toward uniform marginals, rescale the
columns once more to sum to one and transpose.  The result has rows that
sum to one exactly and columns that sum to one up to an error that
vanishes as ``T`` grows.

No gradients flow through here; callers treat the output as a constant.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveEpsilon, NonSquareInput, ShapeMismatch
from .numerics import as_matrix

SIMILARITY_SLACK = 1e-9


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.05
    iterations: int = 3

    def __post_init__(self):
        if not self.epsilon > 0:
            raise NonPositiveEpsilon(f"epsilon must be positive, got {self.epsilon}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError(f"iterations must be a positive integer, got {self.iterations}")


@dataclass(frozen=True)
class AssignmentMatrix:
    values: np.ndarray
    row_marginal_error: float
    col_marginal_error: float

    @property
    def m(self):
        return self.values.shape[0]

    def diag_mass(self):
        """Mean diagonal entry."""
        return float(np.mean(np.diag(self.values)))


def _exp_kernel(scores, epsilon):
    # global shift cancels in the global normalization that follows
    scaled = scores / epsilon
    Q = np.exp(scaled - scaled.max())
    return Q / Q.sum()


def _scale_rows(Q, target):
    return Q * (target / Q.sum(axis=1))[:, None]


def _scale_cols(Q, target):
    return Q * (target / Q.sum(axis=0))[None, :]


def sinkhorn_self_assignment(S, cfg=None):
    """Doubly stochastic assignment ``A`` from an ``m x m`` similarity matrix."""
    cfg = cfg or SinkhornConfig()
    if not cfg.epsilon > 0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {cfg.epsilon}")
    S = as_matrix(S, "similarity")
    m, n = S.shape
    if m != n:
        raise NonSquareInput(f"similarity matrix must be square, got {S.shape}")
    if np.any(np.abs(S) > 1.0 + SIMILARITY_SLACK) or not np.all(np.isfinite(S)):
        raise ValueError("similarity entries must lie in [-1, 1]")

    Q = _exp_kernel(S, cfg.epsilon).T
    c = 1.0 / m
    for _ in range(cfg.iterations):
        Q = _scale_rows(Q, c)
        Q = _scale_cols(Q, c)
    Q = _scale_cols(Q, 1.0)
    A = np.ascontiguousarray(Q.T)
    return AssignmentMatrix(
        values=A,
        row_marginal_error=float(np.max(np.abs(A.sum(axis=1) - 1.0))),
        col_marginal_error=float(np.max(np.abs(A.sum(axis=0) - 1.0))),
    )


def sinkhorn_rectangular(scores, cfg=None):
    """Soft assignment of ``m`` samples to ``K`` prototypes.

    Rows (samples) sum to one; columns (prototypes) approach ``m / K``.
    """
    cfg = cfg or SinkhornConfig()
    if not cfg.epsilon > 0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {cfg.epsilon}")
    scores = as_matrix(scores, "scores")
    m, K = scores.shape
    if m < 1 or K < 1:
        raise ShapeMismatch(f"scores must be non-empty, got {scores.shape}")

    Q = _exp_kernel(scores, cfg.epsilon).T  # K x m
    for _ in range(cfg.iterations):
        Q = _scale_rows(Q, 1.0 / K)
        Q = _scale_cols(Q, 1.0 / m)
    Q = _scale_cols(Q, 1.0)
    return np.ascontiguousarray(Q.T)
