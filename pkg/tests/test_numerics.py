import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resa.errors import NonPositiveTau, NotNormalized, ZeroRow
from resa.numerics import (
    cosine_self_similarity,
    l2_normalize_rows,
    make_rng,
    softmax_rows,
)

from conftest import unit_rows


def test_normalize_345():
    np.testing.assert_allclose(l2_normalize_rows([[3.0, 4.0]]), [[0.6, 0.8]], atol=1e-15)


def test_normalize_axis_vectors():
    np.testing.assert_array_equal(l2_normalize_rows([[1.0, 0.0], [0.0, 2.0]]), np.eye(2))


def test_normalize_random_norms(rng):
    M = rng.standard_normal((5, 7))
    out = l2_normalize_rows(M)
    norms = np.array([np.sqrt(sum(v * v for v in row)) for row in out])
    assert np.max(np.abs(norms - 1)) <= 1e-12
    # direction preserved
    cos = np.sum(out * M, axis=1) / np.linalg.norm(M, axis=1)
    np.testing.assert_allclose(cos, 1.0, atol=1e-12)


def test_normalize_zero_row():
    with pytest.raises(ZeroRow) as exc:
        l2_normalize_rows([[1.0, 1.0], [0.0, 0.0]])
    assert exc.value.index == 1


def test_cosine_identical_rows():
    H = np.array([[0.6, 0.8], [0.6, 0.8]])
    np.testing.assert_allclose(cosine_self_similarity(H), np.ones((2, 2)), atol=1e-15)


def test_cosine_orthogonal():
    np.testing.assert_array_equal(cosine_self_similarity(np.eye(2)), np.eye(2))


def test_cosine_matches_double_loop(rng):
    H = unit_rows(rng, 8, 16)
    S = cosine_self_similarity(H)
    for i in range(8):
        for j in range(8):
            ref = sum(H[i, k] * H[j, k] for k in range(16))
            assert abs(S[i, j] - ref) <= 1e-12
    assert np.array_equal(S, S.T)
    assert np.max(np.abs(np.diag(S) - 1)) <= 1e-12
    assert np.all(np.abs(S) <= 1 + 1e-12)


def test_cosine_rejects_unnormalized():
    with pytest.raises(NotNormalized):
        cosine_self_similarity([[1.0, 0.0], [2.0, 0.0]])


def test_cosine_rotation_invariant(rng):
    H = unit_rows(rng, 10, 6)
    Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    np.testing.assert_allclose(cosine_self_similarity(H @ Q), cosine_self_similarity(H), atol=1e-9)


def test_softmax_uniform():
    np.testing.assert_allclose(softmax_rows([[0.0, 0.0]], 1.0), [[0.5, 0.5]], atol=1e-15)


def test_softmax_sharp():
    assert softmax_rows([[1.0, 0.0]], 0.01)[0, 0] > 1 - 1e-8


def test_softmax_hand_value():
    # e / (e + 1) evaluated to 20 digits with mpmath
    np.testing.assert_allclose(
        softmax_rows([[1.0, 0.0]], 1.0), [[0.73105857863000487925, 0.26894142136999512075]],
        atol=1e-15,
    )


def test_softmax_large_inputs_stay_finite():
    P = softmax_rows([[1e4, 0.0, -1e4]], 0.01)
    assert np.all(np.isfinite(P))
    assert abs(P.sum() - 1) <= 1e-12


def test_softmax_rejects_tau():
    with pytest.raises(NonPositiveTau):
        softmax_rows([[1.0]], 0.0)


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    tau=st.floats(0.05, 5.0),
    shift=st.floats(-50, 50),
)
def test_softmax_shift_invariance(seed, tau, shift):
    r = np.random.default_rng(seed)
    M = r.standard_normal((4, 6))
    c = shift * r.random((4, 1))
    P = softmax_rows(M, tau)
    np.testing.assert_allclose(softmax_rows(M + c, tau), P, atol=1e-12, rtol=0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_operations_are_pure(rng):
    M = rng.standard_normal((6, 5))
    a = softmax_rows(M, 0.3)
    b = softmax_rows(M.copy(), 0.3)
    assert a.tobytes() == b.tobytes()


def test_rng_reproducible():
    a = make_rng(7).standard_normal(5)
    b = make_rng(7).standard_normal(5)
    assert a.tobytes() == b.tobytes()
    kids1 = [g.standard_normal(3) for g in make_rng(7).spawn(2)]
    kids2 = [g.standard_normal(3) for g in make_rng(7).spawn(2)]
    assert all(x.tobytes() == y.tobytes() for x, y in zip(kids1, kids2))
    assert not np.array_equal(kids1[0], kids1[1])
