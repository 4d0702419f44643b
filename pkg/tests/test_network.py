import numpy as np
import pytest

from resa.errors import CoefficientOutOfRange, ShapeMismatch, StaleTape, ZeroRow
from resa.gradcheck import network_check
from resa.network import (
    Mlp,
    MlpSpec,
    NetworkPair,
    NetworkParams,
    OptimizerState,
    backward,
    ema_update,
    forward,
    sgd_step,
)
from resa.assignment import SinkhornConfig, sinkhorn_self_assignment
from resa.numerics import cosine_self_similarity

from conftest import unit_rows


def identity_params(d):
    enc = Mlp([np.eye(d)], [np.zeros(d)])
    proj = Mlp([np.eye(d)], [np.zeros(d)])
    return NetworkParams(enc, proj)


def test_mlp_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec((3,))
    with pytest.raises(ValueError):
        MlpSpec((3, 0))


def test_identity_encoder():
    H, Z, _ = forward(identity_params(3), np.eye(3))
    np.testing.assert_array_equal(H, np.eye(3))
    np.testing.assert_array_equal(Z, np.eye(3))


def test_zero_output_layer_raises_zero_row():
    params = identity_params(2)
    params.projector.weights[0][...] = 0.0
    with pytest.raises(ZeroRow):
        forward(params, np.eye(2))


def test_output_rows_unit(rng):
    params = NetworkParams.init((5, 32, 16), (16, 32, 8), rng=rng)
    _, Z, _ = forward(params, rng.standard_normal((9, 5)))
    np.testing.assert_allclose(np.linalg.norm(Z, axis=1), 1.0, atol=1e-9)


def test_input_shape_checked(rng):
    params = NetworkParams.init((5, 4), (4, 3), rng=rng)
    with pytest.raises(ShapeMismatch):
        forward(params, np.ones((2, 6)))


def test_zero_upstream_gradient(rng):
    params = NetworkParams.init((5, 32, 16), (16, 32, 8), (8, 16, 8), rng=rng)
    _, Z, tape = forward(params, rng.standard_normal((6, 5)), want_grad=True)
    grads = backward(tape, np.zeros_like(Z))
    assert all(not g.any() for g in grads.arrays())


def test_linear_layer_gradient_pattern(rng):
    X = rng.standard_normal((4, 3))
    layer = Mlp.init(MlpSpec((3, 2)), rng)
    cache = []
    layer.forward(X, cache)
    grads, _ = layer.backward(cache, np.ones((4, 2)))
    np.testing.assert_allclose(grads.weights[0], X.T @ np.ones((4, 2)), atol=1e-15)
    np.testing.assert_allclose(grads.biases[0], [4.0, 4.0])


def test_stale_tape(rng):
    params = NetworkParams.init((3, 4), (4, 2), rng=rng)
    _, Z, tape = forward(params, rng.standard_normal((3, 3)), want_grad=True)
    grads = backward(tape, np.ones_like(Z))
    sgd_step(params, grads, OptimizerState(total_steps=10))
    with pytest.raises(StaleTape):
        backward(tape, np.ones_like(Z))
    with pytest.raises(StaleTape):
        backward(None, np.ones_like(Z))


def test_full_network_finite_differences(rng):
    params = NetworkParams.init((5, 6, 4), (4, 5, 3), (3, 4, 3), rng=rng)
    for b in params.arrays():
        if b.ndim == 1:
            b[...] = 0.1 * rng.standard_normal(b.shape) + 0.1
    X1 = rng.standard_normal((6, 5))
    X2 = X1 + 0.2 * rng.standard_normal(X1.shape)
    A = sinkhorn_self_assignment(cosine_self_similarity(unit_rows(rng, 6, 4)), SinkhornConfig(0.3, 3))
    worst, checked, _ = network_check(params, X1, X2, A.values)
    assert checked > 100
    assert worst <= 1e-5


def test_ema_limits(rng):
    online = NetworkParams.init((3, 4), (4, 2), (2, 3, 2), rng=rng)
    pair = NetworkPair.from_online(online, 0.5)
    assert pair.momentum.predictor is None
    for a in pair.momentum.arrays():
        a[...] = rng.standard_normal(a.shape)
    before = [a.copy() for a in pair.momentum.arrays()]
    ema_update(pair, 1.0)
    assert all(np.array_equal(a, b) for a, b in zip(pair.momentum.arrays(), before))
    ema_update(pair, 0.0)
    mirrored = [a for n, a in online.named_arrays() if not n.startswith("predictor")]
    assert all(np.array_equal(a, b) for a, b in zip(pair.momentum.arrays(), mirrored))


def test_ema_scalar_arithmetic(rng):
    online = NetworkParams.init((2, 2), (2, 2), rng=rng)
    for a in online.arrays():
        a[...] = 1.0
    pair = NetworkPair.from_online(online, 0.99)
    for a in pair.momentum.arrays():
        a[...] = 0.0
    ema_update(pair)
    for a in pair.momentum.arrays():
        np.testing.assert_allclose(a, 0.01, rtol=1e-15)


def test_ema_rejects_bad_coefficient(rng):
    pair = NetworkPair.from_online(NetworkParams.init((2, 2), (2, 2), rng=rng), 1.5)
    with pytest.raises(CoefficientOutOfRange):
        ema_update(pair)


def test_ema_contracts(rng):
    online = NetworkParams.init((3, 5, 4), (4, 3), rng=rng)
    pair = NetworkPair.from_online(online, 0.9)
    for a in pair.momentum.arrays():
        a += rng.standard_normal(a.shape)

    def gap():
        return np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(pair.momentum.arrays(), online.arrays())))

    last = gap()
    for _ in range(20):
        ema_update(pair)
        now = gap()
        assert now <= last
        last = now


def test_schedule_points():
    opt = OptimizerState(learning_rate_base=0.4, batch_size=128, warmup_steps=10, total_steps=100)
    peak = 0.4 * 128 / 256
    assert opt.lr_at(10) == peak
    assert abs(opt.lr_at(100) - 0.1 * peak) <= 1e-15
    lrs = [opt.lr_at(s) for s in range(0, 101)]
    assert min(lrs) >= 0.1 * peak - 1e-15
    assert max(lrs) == peak


def test_single_sgd_step():
    w = Mlp([np.ones((1, 1))], [np.zeros(1)])
    params = NetworkParams(w, Mlp([np.ones((1, 1))], [np.zeros(1)]))
    grads = params.zeros_like()
    grads.encoder.weights[0][...] = 1.0
    opt = OptimizerState(learning_rate_base=0.1, weight_decay=0.0, momentum_sgd=0.0, total_steps=10)
    sgd_step(params, grads, opt)
    assert params.encoder.weights[0][0, 0] == pytest.approx(0.9, abs=1e-15)
    assert opt.step == 1


def test_sgd_shape_mismatch(rng):
    params = NetworkParams.init((3, 4), (4, 2), rng=rng)
    other = NetworkParams.init((3, 5), (5, 2), rng=rng)
    with pytest.raises(ShapeMismatch):
        sgd_step(params, other, OptimizerState())
