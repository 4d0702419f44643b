"""Small fully connected networks with hand-written backprop.

An online network is an encoder MLP followed by a projector MLP and an
optional predictor MLP.  Hidden layers use ReLU, output layers are linear,
and the final embedding is L2-normalized.  The momentum network mirrors the
encoder and projector and is updated by exponential moving average.

Weights are stored as ``(fan_in, fan_out)`` so that a batch of row samples
maps as ``X @ W + b``.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CoefficientOutOfRange, ShapeMismatch, StaleTape
from .numerics import as_matrix, l2_normalize_rows, normalize_backward, row_norms


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2:
            raise ValueError("an MLP needs an input dim and at least one layer")
        if min(dims) < 1:
            raise ValueError(f"all dims must be >= 1, got {dims}")
        object.__setattr__(self, "layer_dims", dims)

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]


class Mlp:
    """Weights and biases of one MLP; ReLU between layers, linear output."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases):
            raise ShapeMismatch("weights and biases differ in length")
        for W, b in zip(weights, biases):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeMismatch(f"bad layer shapes {W.shape} / {b.shape}")
        for W_prev, W in zip(weights, weights[1:]):
            if W_prev.shape[1] != W.shape[0]:
                raise ShapeMismatch("consecutive layer dims do not chain")
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, spec, rng):
        """He-normal weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(spec.layer_dims, spec.layer_dims[1:]):
            weights.append(rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def spec(self):
        return MlpSpec((self.weights[0].shape[0],) + tuple(W.shape[1] for W in self.weights))

    def copy(self):
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self):
        return Mlp([np.zeros_like(W) for W in self.weights], [np.zeros_like(b) for b in self.biases])

    def named_arrays(self, prefix):
        out = []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{prefix}.{i}.W", W))
            out.append((f"{prefix}.{i}.b", b))
        return out

    def forward(self, X, cache=None):
        out = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            pre = out @ W + b
            if cache is not None:
                cache.append((out, pre))
            out = np.maximum(pre, 0.0) if i < last else pre
        return out

    def backward(self, cache, grad_out):
        """Return ``(param_grads, grad_input)`` given the forward cache."""
        grads = self.zeros_like()
        g = grad_out
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            inp, pre = cache[i]
            if i < last:
                g = g * (pre > 0)
            grads.weights[i] = inp.T @ g
            grads.biases[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g


@dataclass
class NetworkParams:
    encoder: Mlp
    projector: Mlp
    predictor: Optional[Mlp] = None
    version: int = field(default=0, compare=False)

    @classmethod
    def init(cls, encoder_dims, projector_dims, predictor_dims=None, rng=None):
        enc = Mlp.init(MlpSpec(encoder_dims), rng)
        proj = Mlp.init(MlpSpec(projector_dims), rng)
        pred = Mlp.init(MlpSpec(predictor_dims), rng) if predictor_dims else None
        if enc.spec.out_dim != proj.spec.in_dim:
            raise ShapeMismatch("encoder output dim must equal projector input dim")
        if pred is not None and proj.spec.out_dim != pred.spec.in_dim:
            raise ShapeMismatch("projector output dim must equal predictor input dim")
        return cls(enc, proj, pred)

    def modules(self):
        out = [("encoder", self.encoder), ("projector", self.projector)]
        if self.predictor is not None:
            out.append(("predictor", self.predictor))
        return out

    def named_arrays(self):
        """All parameter arrays in declaration order."""
        out = []
        for name, mlp in self.modules():
            out.extend(mlp.named_arrays(name))
        return out

    def arrays(self):
        return [a for _, a in self.named_arrays()]

    def copy(self, with_predictor=True):
        return NetworkParams(
            self.encoder.copy(),
            self.projector.copy(),
            self.predictor.copy() if (with_predictor and self.predictor is not None) else None,
        )

    def zeros_like(self):
        return NetworkParams(
            self.encoder.zeros_like(),
            self.projector.zeros_like(),
            self.predictor.zeros_like() if self.predictor is not None else None,
        )

    def architecture(self):
        return {name: list(mlp.spec.layer_dims) for name, mlp in self.modules()}

    def touch(self):
        self.version += 1


# gradients share the parameter container layout
ParameterGradients = NetworkParams


@dataclass
class Tape:
    params: NetworkParams
    version: int
    caches: dict
    Z: np.ndarray
    norms: np.ndarray
    used: bool = False


def encode(params, X):
    X = as_matrix(X, "X")
    if X.shape[1] != params.encoder.spec.in_dim:
        raise ShapeMismatch(
            f"input has {X.shape[1]} columns, encoder expects {params.encoder.spec.in_dim}"
        )
    return params.encoder.forward(X)


def forward(params, X, want_grad=False):
    """Run the network; return ``(H, Z, tape)`` with ``Z`` row-normalized.

    ``tape`` is ``None`` unless ``want_grad``.
    """
    X = as_matrix(X, "X")
    if X.shape[1] != params.encoder.spec.in_dim:
        raise ShapeMismatch(
            f"input has {X.shape[1]} columns, encoder expects {params.encoder.spec.in_dim}"
        )
    caches = {name: [] for name, _ in params.modules()} if want_grad else None
    out = X
    H = None
    for name, mlp in params.modules():
        out = mlp.forward(out, caches[name] if want_grad else None)
        if name == "encoder":
            H = out
    U = out
    Z = l2_normalize_rows(U)
    tape = None
    if want_grad:
        tape = Tape(params, params.version, caches, Z, row_norms(U))
    return H, Z, tape


def backward(tape, grad_wrt_Z):
    """Parameter gradients for an upstream gradient on the normalized ``Z``."""
    if tape is None or tape.caches is None:
        raise StaleTape("forward was run without want_grad")
    if tape.params.version != tape.version:
        raise StaleTape("parameters changed since the forward pass")
    grad_wrt_Z = as_matrix(grad_wrt_Z, "grad_wrt_Z")
    if grad_wrt_Z.shape != tape.Z.shape:
        raise ShapeMismatch(f"gradient shape {grad_wrt_Z.shape} != output shape {tape.Z.shape}")
    params = tape.params
    g = normalize_backward(tape.Z, tape.norms, grad_wrt_Z)
    grads = {}
    for name, mlp in reversed(params.modules()):
        grads[name], g = mlp.backward(tape.caches[name], g)
    return ParameterGradients(grads["encoder"], grads["projector"], grads.get("predictor"))


@dataclass
class NetworkPair:
    online: NetworkParams
    momentum: NetworkParams
    momentum_coeff: float = 0.99

    @classmethod
    def from_online(cls, online, momentum_coeff=0.99):
        return cls(online, online.copy(with_predictor=False), momentum_coeff)


def ema_update(pair, coeff=None):
    """``momentum <- c * momentum + (1 - c) * online`` over encoder and projector."""
    c = pair.momentum_coeff if coeff is None else coeff
    if not 0.0 <= c <= 1.0:
        raise CoefficientOutOfRange(f"momentum coefficient must lie in [0, 1], got {c}")
    for (name_t, target), (name_s, source) in zip(
        pair.momentum.named_arrays(), pair.online.named_arrays()
    ):
        if name_t != name_s or target.shape != source.shape:
            raise ShapeMismatch(f"momentum layout differs from online at {name_t}")
        target *= c
        target += (1.0 - c) * source
    pair.momentum.touch()
    return pair


@dataclass
class OptimizerState:
    learning_rate_base: float = 0.3
    weight_decay: float = 1e-4
    momentum_sgd: float = 0.9
    step: int = 0
    warmup_steps: int = 0
    total_steps: int = 1
    min_lr_fraction: float = 0.1
    batch_size: int = 256
    velocity: dict = field(default_factory=dict)

    @property
    def peak_lr(self):
        # linear scaling rule
        return self.learning_rate_base * self.batch_size / 256.0

    def lr_at(self, step):
        """Linear warmup from the floor to the peak, then cosine decay back to it."""
        peak = self.peak_lr
        floor = self.min_lr_fraction * peak
        if step < self.warmup_steps:
            return floor + (peak - floor) * step / self.warmup_steps
        span = self.total_steps - self.warmup_steps
        if span <= 0:
            return peak
        progress = min(1.0, (step - self.warmup_steps) / span)
        return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))

    @property
    def lr(self):
        return self.lr_at(self.step)


def _decays(name):
    return name.endswith(".W")


def apply_sgd(named_params, named_grads, opt, lr):
    """Heavy-ball SGD with decoupled weight decay on weight matrices only."""
    if len(named_params) != len(named_grads):
        raise ShapeMismatch("parameter and gradient lists differ in length")
    for (name, w), (gname, g) in zip(named_params, named_grads):
        if gname != name or g.shape != w.shape:
            raise ShapeMismatch(f"gradient for {name} does not match parameter shape")
        v = opt.velocity.get(name)
        if v is None:
            v = np.zeros_like(w)
        v = opt.momentum_sgd * v + g
        opt.velocity[name] = v
        if opt.weight_decay and _decays(name):
            w -= lr * opt.weight_decay * w
        w -= lr * v


def sgd_step(params, grads, opt):
    """Update ``params`` in place at the scheduled rate and advance the step."""
    lr = opt.lr
    apply_sgd(params.named_arrays(), grads.named_arrays(), opt, lr)
    params.touch()
    opt.step += 1
    return params
