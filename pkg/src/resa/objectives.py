"""Self-assignment cross-entropy and the two baselines it is compared with.

All three losses take raw embedding rows, L2-normalize them internally and
return gradients with respect to those raw rows, so the reported
``grad_wrt_Z`` already includes the normalization Jacobian.  For inputs
that are already unit rows the normalization is the identity and the
gradient is the tangential projection of the similarity-space gradient.

Similarities are ``S = Z @ Zp.T``; row ``i`` of ``softmax(S / tau)`` is the
prediction distribution of sample ``i`` over the other view's batch.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .assignment import AssignmentMatrix, sinkhorn_rectangular
from .errors import RowsNotStochastic, ShapeMismatch, TooFewPrototypes
from .numerics import (
    as_matrix,
    l2_normalize_rows,
    log_softmax_rows,
    normalize_backward,
    row_norms,
)

VARIANTS = ("ReSA", "InfoNCE", "SwAV")
DEFAULT_TAU = {"ReSA": 0.4, "InfoNCE": 0.1, "SwAV": 0.1}
ROW_STOCHASTIC_TOL = 1e-6


@dataclass(frozen=True)
class LossConfig:
    tau: Optional[float] = None
    variant: str = "ReSA"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.tau is None:
            object.__setattr__(self, "tau", DEFAULT_TAU[self.variant])
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


@dataclass
class LossResult:
    value: float
    grad_wrt_Z: np.ndarray
    grad_wrt_Zprime: np.ndarray
    # d loss(z_i) / d s_ij for the Z -> Zp direction, before the 1/(2m) factor
    grad_wrt_similarity: np.ndarray
    probabilities: np.ndarray
    # the Zp -> Z direction, same conventions
    grad_wrt_similarity_rev: Optional[np.ndarray] = None
    probabilities_rev: Optional[np.ndarray] = None
    grad_wrt_prototypes: Optional[np.ndarray] = None
    # SwAV only: the (Q, Qp) codes used as targets
    codes: Optional[tuple] = None


class PrototypeBank:
    """``K`` learnable prototype rows, kept on the unit sphere."""

    def __init__(self, C):
        self.C = l2_normalize_rows(C)

    @classmethod
    def random(cls, K, dim, rng):
        return cls(rng.standard_normal((K, dim)))

    @property
    def K(self):
        return self.C.shape[0]

    def renormalize(self):
        self.C = l2_normalize_rows(self.C)
        return self


def _unit_rows(Z, name):
    Z = as_matrix(Z, name)
    norms = row_norms(Z)
    return l2_normalize_rows(Z), norms


def _check_pair(Z, Zp):
    if Z.shape != Zp.shape:
        raise ShapeMismatch(f"views have different shapes {Z.shape} vs {Zp.shape}")


def _cross_entropy_grad(P, target, tau):
    """d/dS of ``-sum_j target_ij log softmax(S/tau)_ij`` for every row ``i``."""
    return (P * target.sum(axis=1, keepdims=True) - target) / tau


def _soft_target_loss(Z, Zp, A, tau):
    Zn, nz = _unit_rows(Z, "Z")
    Zpn, nzp = _unit_rows(Zp, "Zp")
    _check_pair(Zn, Zpn)
    m = Zn.shape[0]
    S = Zn @ Zpn.T
    logP = log_softmax_rows(S, tau)
    logPr = log_softmax_rows(S.T, tau)
    At = A.T
    value = -(np.sum(A * logP) + np.sum(At * logPr)) / (2 * m)

    P, Pr = np.exp(logP), np.exp(logPr)
    G = _cross_entropy_grad(P, A, tau)
    Gr = _cross_entropy_grad(Pr, At, tau)
    dS = (G + Gr.T) / (2 * m)
    gZ = normalize_backward(Zn, nz, dS @ Zpn)
    gZp = normalize_backward(Zpn, nzp, dS.T @ Zn)
    return LossResult(
        value=float(value),
        grad_wrt_Z=gZ,
        grad_wrt_Zprime=gZp,
        grad_wrt_similarity=G,
        probabilities=P,
        grad_wrt_similarity_rev=Gr,
        probabilities_rev=Pr,
    )


def resa_loss(Z, Zp, A, cfg=None):
    """Symmetric cross-entropy between the assignment ``A`` and view softmaxes.

    ``A`` pairs with ``softmax(Z @ Zp.T / tau)`` and ``A.T`` with
    ``softmax(Zp @ Z.T / tau)``.  ``A`` is a constant: no gradient is
    returned for it.
    """
    cfg = cfg or LossConfig(variant="ReSA")
    if isinstance(A, AssignmentMatrix):
        A = A.values
    A = as_matrix(A, "assignment")
    m = np.shape(Z)[0]
    if A.shape != (m, m):
        raise ShapeMismatch(f"assignment must be {m}x{m}, got {A.shape}")
    row_err = np.abs(A.sum(axis=1) - 1.0)
    if not np.all(row_err <= ROW_STOCHASTIC_TOL) or np.any(A < 0):
        raise RowsNotStochastic("assignment rows must be non-negative and sum to 1")
    return _soft_target_loss(Z, Zp, A, cfg.tau)


def infonce_loss(Z, Zp, cfg=None):
    """Symmetric InfoNCE: matching indices across views are the positives."""
    cfg = cfg or LossConfig(variant="InfoNCE")
    Zn, nz = _unit_rows(Z, "Z")
    Zpn, nzp = _unit_rows(Zp, "Zp")
    _check_pair(Zn, Zpn)
    m = Zn.shape[0]
    S = Zn @ Zpn.T
    logP = log_softmax_rows(S, cfg.tau)
    logPr = log_softmax_rows(S.T, cfg.tau)
    value = -(np.trace(logP) + np.trace(logPr)) / (2 * m)

    P, Pr = np.exp(logP), np.exp(logPr)
    # positive entry: -(1/tau) * sum_{k != i} P_ik; negatives: P_ij / tau
    G = P / cfg.tau
    G[np.diag_indices(m)] = -(P.sum(axis=1) - np.diag(P)) / cfg.tau
    Gr = Pr / cfg.tau
    Gr[np.diag_indices(m)] = -(Pr.sum(axis=1) - np.diag(Pr)) / cfg.tau
    dS = (G + Gr.T) / (2 * m)
    gZ = normalize_backward(Zn, nz, dS @ Zpn)
    gZp = normalize_backward(Zpn, nzp, dS.T @ Zn)
    return LossResult(
        value=float(value),
        grad_wrt_Z=gZ,
        grad_wrt_Zprime=gZp,
        grad_wrt_similarity=G,
        probabilities=P,
        grad_wrt_similarity_rev=Gr,
        probabilities_rev=Pr,
    )


def swav_loss(Z, Zp, bank, cfg=None, scfg=None, codes=None):
    """Swapped prediction against learnable prototypes.

    Codes ``Q = sinkhorn(Z C^T)`` and ``Qp = sinkhorn(Zp C^T)`` are
    constants; each view's prototype softmax is trained to predict the
    other view's code.  Gradients are returned for ``Z``, ``Zp`` and the
    prototype matrix ``C`` as stored (no normalization chain on ``C``).
    ``codes`` overrides the Sinkhorn codes, e.g. to hold them fixed while
    differencing.
    """
    cfg = cfg or LossConfig(variant="SwAV")
    if bank.K < 2:
        raise TooFewPrototypes(f"need at least 2 prototypes, got {bank.K}")
    Zn, nz = _unit_rows(Z, "Z")
    Zpn, nzp = _unit_rows(Zp, "Zp")
    _check_pair(Zn, Zpn)
    C = bank.C
    if C.shape[1] != Zn.shape[1]:
        raise ShapeMismatch(f"prototype dim {C.shape[1]} != embedding dim {Zn.shape[1]}")
    m = Zn.shape[0]
    scores = Zn @ C.T
    scores_p = Zpn @ C.T
    if codes is None:
        codes = (sinkhorn_rectangular(scores, scfg), sinkhorn_rectangular(scores_p, scfg))
    Q, Qp = codes

    logP = log_softmax_rows(scores, cfg.tau)
    logPp = log_softmax_rows(scores_p, cfg.tau)
    value = -(np.sum(Qp * logP) + np.sum(Q * logPp)) / (2 * m)

    P, Pp = np.exp(logP), np.exp(logPp)
    G = _cross_entropy_grad(P, Qp, cfg.tau)
    Gp = _cross_entropy_grad(Pp, Q, cfg.tau)
    dscores = G / (2 * m)
    dscores_p = Gp / (2 * m)
    gZ = normalize_backward(Zn, nz, dscores @ C)
    gZp = normalize_backward(Zpn, nzp, dscores_p @ C)
    gC = dscores.T @ Zn + dscores_p.T @ Zpn
    return LossResult(
        value=float(value),
        grad_wrt_Z=gZ,
        grad_wrt_Zprime=gZp,
        grad_wrt_similarity=G,
        probabilities=P,
        grad_wrt_similarity_rev=Gp,
        probabilities_rev=Pp,
        grad_wrt_prototypes=gC,
        codes=(Q, Qp),
    )
