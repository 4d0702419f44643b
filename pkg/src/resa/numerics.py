"""Dense-matrix kernels shared by every other module.

Matrices are plain 2-D ``numpy.float64`` arrays with samples stored as rows
(``m x d``).  Formulas written in the column convention ``H^T H`` therefore
appear here as ``H @ H.T``; that transposition is applied consistently
across the package and is not repeated in each docstring.
"""

import numpy as np

from .errors import NonPositiveTau, NotNormalized, ShapeMismatch, ZeroRow

ZERO_NORM = 1e-30
NORMALIZED_TOL = 1e-9


def as_matrix(M, name="matrix"):
    """Return ``M`` as a C-contiguous float64 2-D array."""
    A = np.ascontiguousarray(M, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {A.shape}")
    return A


def make_rng(seed):
    """Deterministic generator: PCG64 seeded through ``SeedSequence``.

    Child streams come from :func:`split_rng`, which relies on
    ``SeedSequence.spawn`` so they are independent and reproducible.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def split_rng(rng, n):
    return rng.spawn(n)


def row_norms(M):
    return np.sqrt(np.einsum("ij,ij->i", M, M))


def l2_normalize_rows(M):
    M = as_matrix(M)
    norms = row_norms(M)
    # NaN rows pass through so divergence surfaces as a non-finite loss
    bad = np.flatnonzero(norms < ZERO_NORM)
    if bad.size:
        raise ZeroRow(int(bad[0]))
    return M / norms[:, None]


def check_normalized(M, tol=NORMALIZED_TOL):
    err = np.abs(row_norms(M) - 1.0)
    bad = np.flatnonzero(~(err <= tol))
    if bad.size:
        raise NotNormalized(int(bad[0]))


def cosine_self_similarity(H):
    """Pairwise cosine similarities ``H @ H.T`` of row-normalized ``H``."""
    H = as_matrix(H)
    check_normalized(H)
    S = H @ H.T
    # gemm does not promise bitwise symmetry
    return 0.5 * (S + S.T)


def _check_tau(tau):
    if not tau > 0:
        raise NonPositiveTau(f"temperature must be positive, got {tau}")


def log_softmax_rows(M, tau=1.0):
    _check_tau(tau)
    M = as_matrix(M) / tau
    shifted = M - M.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_rows(M, tau=1.0):
    """Row-wise softmax of ``M / tau`` with max-subtraction."""
    _check_tau(tau)
    M = as_matrix(M) / tau
    E = np.exp(M - M.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def normalize_backward(Z, norms, grad_Z):
    """Pull a gradient w.r.t. ``Z = U / |U|`` back to the raw rows ``U``."""
    radial = np.einsum("ij,ij->i", Z, grad_Z)
    return (grad_Z - Z * radial[:, None]) / norms[:, None]
