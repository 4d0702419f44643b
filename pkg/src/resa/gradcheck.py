"""Analytic-vs-numeric gradient suites.

Numeric gradients are central differences with step ``h`` in float64.  The
error of a suite is the largest entrywise relative error

    |analytic - numeric| / max(|analytic|, |numeric|, floor)

where ``floor`` (1e-5) covers entries so small that the central
difference itself is no longer accurate to five digits: for O(1) losses
and ``h = 1e-5`` its own error is around 1e-11 to 1e-10 absolute.  Entries
whose stencil crosses a ReLU kink are not differentiable there and are
skipped (and counted).
"""

from dataclasses import dataclass

import numpy as np

from .assignment import SinkhornConfig, sinkhorn_self_assignment
from .network import NetworkParams, backward, forward
from .numerics import cosine_self_similarity, l2_normalize_rows, normalize_backward, row_norms
from .objectives import LossConfig, PrototypeBank, infonce_loss, resa_loss, swav_loss

H_STEP = 1e-5
FLOOR = 1e-5
TOLERANCE = 1e-5


@dataclass
class SuiteResult:
    name: str
    worst: float
    tolerance: float
    checked: int
    skipped: int = 0

    @property
    def passed(self):
        return self.worst <= self.tolerance


def central_difference(f, x, h=H_STEP):
    """Numeric gradient of scalar ``f`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic, numeric, floor=FLOOR):
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _random_assignment(rng, m):
    H = l2_normalize_rows(rng.standard_normal((m, 6)))
    return sinkhorn_self_assignment(cosine_self_similarity(H), SinkhornConfig(0.5, 3)).values


def suite_normalize(rng, flip=1.0):
    U = rng.standard_normal((5, 4))
    W = rng.standard_normal((5, 4))

    def f():
        return float(np.sum(W * l2_normalize_rows(U)))

    analytic = flip * normalize_backward(l2_normalize_rows(U), row_norms(U), W)
    numeric = central_difference(f, U)
    return SuiteResult("normalize", relative_error(analytic, numeric), TOLERANCE, U.size)


def _loss_suite(name, rng, loss_fn, flip, with_bank=False):
    m, d = 6, 5
    Z = rng.standard_normal((m, d))
    Zp = rng.standard_normal((m, d))
    arrays = [Z, Zp]
    bank = None
    if with_bank:
        bank = PrototypeBank.random(4, d, rng)
        arrays.append(bank.C)

    res = loss_fn(Z, Zp, bank)
    frozen = res.codes

    def value():
        return loss_fn(Z, Zp, bank, frozen).value

    analytic = [res.grad_wrt_Z, res.grad_wrt_Zprime]
    if with_bank:
        analytic.append(res.grad_wrt_prototypes)
    worst, checked = 0.0, 0
    for a, x in zip(analytic, arrays):
        worst = max(worst, relative_error(flip * a, central_difference(value, x)))
        checked += x.size
    return SuiteResult(name, worst, TOLERANCE, checked)


def suite_resa(rng, flip=1.0):
    A = _random_assignment(rng, 6)
    cfg = LossConfig(tau=0.4, variant="ReSA")
    return _loss_suite("resa_loss", rng, lambda Z, Zp, _b, _c=None: resa_loss(Z, Zp, A, cfg), flip)


def suite_infonce(rng, flip=1.0):
    cfg = LossConfig(tau=0.2, variant="InfoNCE")
    return _loss_suite("infonce_loss", rng, lambda Z, Zp, _b, _c=None: infonce_loss(Z, Zp, cfg), flip)


def suite_swav(rng, flip=1.0):
    cfg = LossConfig(tau=0.3, variant="SwAV")
    scfg = SinkhornConfig(0.5, 3)
    return _loss_suite(
        "swav_loss", rng, lambda Z, Zp, bank, codes=None: swav_loss(Z, Zp, bank, cfg, scfg, codes), flip, True
    )


def suite_similarity_identities(rng, flip=1.0):
    """Closed-form similarity gradients: (P - A)/tau and the InfoNCE split."""
    m, d = 7, 5
    Z, Zp = rng.standard_normal((m, d)), rng.standard_normal((m, d))
    A = _random_assignment(rng, m)
    worst = 0.0
    for tau in (0.1, 0.4, 1.0):
        r = resa_loss(Z, Zp, A, LossConfig(tau=tau))
        worst = max(worst, float(np.max(np.abs(flip * r.grad_wrt_similarity - (r.probabilities - A) / tau))))
        n = infonce_loss(Z, Zp, LossConfig(tau=tau, variant="InfoNCE"))
        P = n.probabilities
        expected = P / tau
        off = P.sum(axis=1) - np.diag(P)
        expected[np.diag_indices(m)] = -off / tau
        worst = max(worst, float(np.max(np.abs(flip * n.grad_wrt_similarity - expected))))
    return SuiteResult("similarity_identities", worst, 1e-12, 2 * 3 * m * m)


def _relu_masks(params, X):
    _, _, tape = forward(params, X, want_grad=True)
    masks = []
    for name, _ in params.modules():
        cache = tape.caches[name]
        for inp, pre in cache[:-1]:
            masks.append(pre > 0)
    return masks


def network_check(params, X1, X2, A, tau=0.4, flip=1.0):
    """Worst relative error over every parameter of a network with a ReSA head."""
    cfg = LossConfig(tau=tau)

    def value():
        _, Z1, _ = forward(params, X1)
        _, Z2, _ = forward(params, X2)
        return resa_loss(Z1, Z2, A, cfg).value

    _, Z1, t1 = forward(params, X1, want_grad=True)
    _, Z2, t2 = forward(params, X2, want_grad=True)
    res = resa_loss(Z1, Z2, A, cfg)
    g = backward(t1, res.grad_wrt_Z)
    for a, b in zip(g.arrays(), backward(t2, res.grad_wrt_Zprime).arrays()):
        a += b

    base_masks = _relu_masks(params, X1) + _relu_masks(params, X2)
    worst, checked, skipped = 0.0, 0, 0
    for (_, w), (_, gw) in zip(params.named_arrays(), g.named_arrays()):
        flat, gflat = w.reshape(-1), gw.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + H_STEP
            fp = value()
            kink = _masks_differ(base_masks, params, X1, X2)
            flat[i] = old - H_STEP
            fm = value()
            kink = kink or _masks_differ(base_masks, params, X1, X2)
            flat[i] = old
            if kink:
                skipped += 1
                continue
            numeric = (fp - fm) / (2 * H_STEP)
            worst = max(worst, relative_error(flip * gflat[i], numeric))
            checked += 1
    return worst, checked, skipped


def _masks_differ(base, params, X1, X2):
    now = _relu_masks(params, X1) + _relu_masks(params, X2)
    return any(not np.array_equal(a, b) for a, b in zip(base, now))


def suite_network(rng, flip=1.0, configs=20):
    worst, checked, skipped = 0.0, 0, 0
    for _ in range(configs):
        d_in = int(rng.integers(3, 7))
        hidden = int(rng.integers(3, 7))
        enc = (d_in, hidden, int(rng.integers(3, 6)))
        proj = (enc[-1], int(rng.integers(3, 6)), int(rng.integers(2, 5)))
        pred = None
        if rng.random() < 0.5:
            pred = (proj[-1], int(rng.integers(2, 5)), proj[-1])
        params = NetworkParams.init(enc, proj, pred, rng=rng)
        for _, b in params.named_arrays():
            if b.ndim == 1:
                b[...] = 0.1 * rng.standard_normal(b.shape)
        m = int(rng.integers(3, 7))
        X1 = rng.standard_normal((m, d_in))
        X2 = X1 + 0.3 * rng.standard_normal((m, d_in))
        A = _random_assignment(rng, m)
        w, c, s = network_check(params, X1, X2, A, tau=float(rng.choice([0.2, 0.4, 1.0])), flip=flip)
        worst = max(worst, w)
        checked += c
        skipped += s
    return SuiteResult("network", worst, TOLERANCE, checked, skipped)


SUITES = (
    suite_similarity_identities,
    suite_normalize,
    suite_resa,
    suite_infonce,
    suite_swav,
    suite_network,
)


def run_all(seed=0, flip=1.0):
    """Run every suite with a generator seeded by ``seed``."""
    rng = np.random.default_rng(seed)
    return [suite(rng, flip=flip) for suite in SUITES]
