import itertools
from types import SimpleNamespace

import mpmath as mp
import numpy as np
import pytest

from resa.assignment import SinkhornConfig, sinkhorn_rectangular, sinkhorn_self_assignment
from resa.errors import NonPositiveEpsilon, NonSquareInput
from resa.numerics import cosine_self_similarity

from conftest import unit_rows


def literal_sinkhorn(S, eps, T, dps=50):
    """Step-by-step re-execution in mpmath, no shortcuts."""
    with mp.workdps(dps):
        m = len(S)
        E = [[mp.e ** (mp.mpf(S[j][i]) / eps) for j in range(m)] for i in range(m)]  # transposed
        total = sum(sum(row) for row in E)
        Q = [[v / total for v in row] for row in E]
        c = mp.mpf(1) / m
        for _ in range(T):
            for i in range(m):
                u = sum(Q[i])
                Q[i] = [q * c / u for q in Q[i]]
            for j in range(m):
                v = sum(Q[i][j] for i in range(m))
                for i in range(m):
                    Q[i][j] = Q[i][j] * c / v
        for j in range(m):
            v = sum(Q[i][j] for i in range(m))
            for i in range(m):
                Q[i][j] = Q[i][j] / v
        return [[float(Q[j][i]) for j in range(m)] for i in range(m)]


def test_single_sample():
    A = sinkhorn_self_assignment([[1.0]])
    np.testing.assert_array_equal(A.values, [[1.0]])


def test_identical_samples_uniform():
    A = sinkhorn_self_assignment(np.ones((2, 2)))
    np.testing.assert_allclose(A.values, 0.5, atol=1e-15)


def test_two_orthogonal_samples_frozen():
    A = sinkhorn_self_assignment(np.eye(2), SinkhornConfig(0.05, 3)).values
    # 1 / (1 + e^20) from the mpmath re-execution
    off = 0.00000000206115361819020358143086212947
    np.testing.assert_allclose(A, [[1 - off, off], [off, 1 - off]], rtol=1e-12, atol=0)
    np.testing.assert_allclose(A, literal_sinkhorn(np.eye(2), 0.05, 3), rtol=1e-12, atol=0)


@pytest.mark.parametrize("m,T,eps", [(3, 3, 0.05), (5, 3, 0.05), (6, 1, 0.25), (4, 7, 0.1)])
def test_matches_literal_reexecution(m, T, eps):
    r = np.random.default_rng(m * 100 + T)
    S = cosine_self_similarity(unit_rows(r, m, 4))
    A = sinkhorn_self_assignment(S, SinkhornConfig(eps, T)).values
    np.testing.assert_allclose(A, literal_sinkhorn(S.tolist(), eps, T), rtol=1e-10, atol=1e-300)


def test_rows_exact_columns_converge(rng):
    for _ in range(100):
        m = rng.choice([4, 16, 64])
        # at d=8 the near-diagonal kernel needs far more than 50 sweeps
        S = cosine_self_similarity(unit_rows(rng, m, rng.choice([32, 64])))
        A = sinkhorn_self_assignment(S, SinkhornConfig(0.05, 50))
        assert A.row_marginal_error <= 1e-9
        assert A.col_marginal_error <= 1e-6
        assert np.all(A.values >= 0)


def test_errors():
    with pytest.raises(NonSquareInput):
        sinkhorn_self_assignment(np.zeros((2, 3)))
    with pytest.raises(NonPositiveEpsilon):
        SinkhornConfig(epsilon=0.0)
    with pytest.raises(NonPositiveEpsilon):
        sinkhorn_rectangular(np.zeros((2, 3)), SimpleNamespace(epsilon=-1.0, iterations=3))


def test_permutation_equivariance(rng):
    S = cosine_self_similarity(unit_rows(rng, 9, 5))
    perm = rng.permutation(9)
    P = np.eye(9)[perm]
    A = sinkhorn_self_assignment(S).values
    Ap = sinkhorn_self_assignment(P @ S @ P.T).values
    np.testing.assert_allclose(Ap, P @ A @ P.T, atol=1e-12, rtol=0)


def test_diagonal_argmax(rng):
    for m, d in itertools.product([4, 16, 64], [8, 32]):
        for _ in range(34):
            S = cosine_self_similarity(unit_rows(rng, m, d))
            A = sinkhorn_self_assignment(S).values
            assert np.array_equal(A.argmax(axis=1), np.arange(m))


def test_sharpness_monotone_in_epsilon():
    r = np.random.default_rng(3)
    for _ in range(20):
        S = cosine_self_similarity(unit_rows(r, 16, 8))
        diag = [
            np.mean(np.diag(sinkhorn_self_assignment(S, SinkhornConfig(eps, 3)).values))
            for eps in (0.01, 0.05, 0.25)
        ]
        assert diag[0] >= diag[1] >= diag[2]


def test_rectangular_trivial():
    np.testing.assert_array_equal(sinkhorn_rectangular([[0.3]]), [[1.0]])
    np.testing.assert_allclose(sinkhorn_rectangular(np.full((2, 4), 0.7)), 0.25, atol=1e-15)


def test_rectangular_marginals(rng):
    Q = sinkhorn_rectangular(rng.uniform(-1, 1, (4, 3)), SinkhornConfig(0.05, 50))
    np.testing.assert_allclose(Q.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(Q.sum(axis=0), 4 / 3, atol=1e-6)
