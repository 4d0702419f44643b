"""Self-assignment training loop, baselines and checkpointing.

One ReSA step:

1. draw a batch and two views (one weak, one standard by default);
2. encode the weak view with the momentum encoder, normalize, take cosine
   self-similarities and run Sinkhorn to get the assignment ``A``;
3. embed both views with the online network and apply the symmetric
   cross-entropy against ``A``;
4. backprop into the online network only, take an SGD step, update the
   momentum copy.

Labels never reach the loss; they are used by the diagnostics only.
"""

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as config_mod
from .assignment import sinkhorn_self_assignment
from .config import TrainConfig
from .datagen import augment
from .errors import BatchTooSmall, ConfigMismatch, CorruptCheckpoint, NonFiniteLoss, ShapeMismatch
from .metrics import (
    KnnConfig,
    MetricsRecord,
    adjusted_rand_index,
    embedding_min_std,
    kmeans,
    knn_classify,
    linear_probe,
    silhouette,
)
from .network import (
    NetworkPair,
    NetworkParams,
    OptimizerState,
    apply_sgd,
    backward,
    ema_update,
    encode,
    forward,
    sgd_step,
)
from .numerics import as_matrix, cosine_self_similarity, l2_normalize_rows
from .objectives import LossConfig, PrototypeBank, infonce_loss, resa_loss, swav_loss

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "epoch",
    "loss",
    "sc_mean",
    "sc_std",
    "ari",
    "knn_acc",
    "collapse_min_std",
    "diag_mass",
    "lr",
)

# stream ids for seeds derived from (seed, purpose, ...)
_EVAL_STREAM = 101
_PROBE_STREAM = 102


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    # every epoch, evaluated or not: epoch, loss, diag_mass, min_std, lr
    epoch_stats: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_clock: list = field(default_factory=list)

    def record_for(self, epoch):
        for r in self.records:
            if r.epoch == epoch:
                return r
        raise KeyError(epoch)

    def to_csv(self):
        lines = [",".join(CSV_COLUMNS)]
        for r in self.records:
            row = (
                r.epoch,
                r.loss,
                r.sc_mean,
                r.sc_std,
                r.ari,
                r.knn_accuracy,
                r.collapse_min_std,
                r.assignment_diag_mass,
                r.lr,
            )
            lines.append(",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    def to_json_dict(self):
        return {
            "config": self.config,
            "records": [r.to_dict() for r in self.records],
            "epoch_stats": self.epoch_stats,
        }

    @classmethod
    def from_json_dict(cls, d, wall_clock=()):
        return cls(
            records=[MetricsRecord(**r) for r in d["records"]],
            epoch_stats=list(d["epoch_stats"]),
            config=d["config"],
            wall_clock=list(wall_clock),
        )

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "runlog.csv").write_text(self.to_csv())
        (out / "runlog.json").write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True))
        # timings vary between runs, keep them out of the deterministic files
        (out / "timing.json").write_text(json.dumps({"epoch_seconds": self.wall_clock}))


@dataclass
class TrainState:
    cfg: TrainConfig
    pair: NetworkPair
    opt: OptimizerState
    bank: object
    shuffle_rng: np.random.Generator
    augment_rng: np.random.Generator
    epoch: int
    log: RunLog
    in_dim: int


def _derived_rng(*keys):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in keys])))


def _loss_cfg(cfg, variant):
    if variant == cfg.loss.variant:
        return cfg.loss
    return LossConfig(variant=variant)


def init_state(cfg, in_dim, n_samples, variant=None):
    variant = variant or cfg.loss.variant
    root = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(cfg.seed))))
    init_rng, shuffle_rng, augment_rng, proto_rng = root.spawn(4)
    enc, proj, pred = cfg.network.dims(in_dim, cfg.use_predictor)
    online = NetworkParams.init(enc, proj, pred, rng=init_rng)
    pair = NetworkPair.from_online(online, cfg.momentum_coeff)
    steps = n_samples // cfg.batch_size
    oc = cfg.optimizer
    opt = OptimizerState(
        learning_rate_base=oc.base_lr,
        weight_decay=oc.weight_decay,
        momentum_sgd=oc.momentum,
        warmup_steps=oc.warmup_epochs * steps,
        total_steps=max(1, cfg.epochs * steps),
        min_lr_fraction=oc.min_lr_fraction,
        batch_size=cfg.batch_size,
    )
    bank = None
    if variant == "SwAV":
        bank = PrototypeBank.random(cfg.n_prototypes, cfg.network.embedding_dim, proto_rng)
    snapshot = config_mod.to_dict(cfg)
    snapshot["loss"] = config_mod.to_dict(_loss_cfg(cfg, variant))
    return TrainState(
        cfg=cfg,
        pair=pair,
        opt=opt,
        bank=bank,
        shuffle_rng=shuffle_rng,
        augment_rng=augment_rng,
        epoch=0,
        log=RunLog(config=snapshot),
        in_dim=in_dim,
    )


def _variant(state):
    return state.log.config["loss"]["variant"]


def _assignment_net(state):
    cfg = state.cfg
    if cfg.use_momentum and cfg.assignment_source == "momentum_encoder":
        return state.pair.momentum
    return state.pair.online


def _views(cfg, B, rng, variant):
    """Return ``(X1, X2, X_assign)`` for one batch."""
    std, weak = cfg.augment_standard, cfg.augment_weak
    if variant != "ReSA" or cfg.weak_view_index == 0:
        X1 = augment(B, std, rng)
        X2 = augment(B, std, rng)
        return X1, X2, X1
    Xw = augment(B, weak, rng)
    Xs = augment(B, std, rng)
    if not cfg.weak_view_in_loss:
        Xs2 = augment(B, std, rng)
        return Xs2, Xs, Xw
    if cfg.weak_view_index == 1:
        return Xw, Xs, Xw
    return Xs, Xw, Xw


def assignment_for(params, X, scfg):
    """Gradient-free self-assignment from the encodings of ``X``."""
    H = encode(params, X)
    return sinkhorn_self_assignment(cosine_self_similarity(l2_normalize_rows(H)), scfg)


def _loss_and_grads(state, X1, X2, A, variant):
    cfg = state.cfg
    lcfg = _loss_cfg(cfg, variant)
    _, Z1, t1 = forward(state.pair.online, X1, want_grad=True)
    _, Z2, t2 = forward(state.pair.online, X2, want_grad=True)
    if variant == "ReSA":
        res = resa_loss(Z1, Z2, A, lcfg)
    elif variant == "InfoNCE":
        res = infonce_loss(Z1, Z2, lcfg)
    else:
        res = swav_loss(Z1, Z2, state.bank, lcfg, cfg.sinkhorn)
    g1 = backward(t1, res.grad_wrt_Z)
    g2 = backward(t2, res.grad_wrt_Zprime)
    for a, b in zip(g1.arrays(), g2.arrays()):
        a += b
    return res, g1, Z1


def _diverged(state, value):
    return NonFiniteLoss(
        state.opt.step,
        dump={
            "epoch": state.epoch,
            "step": state.opt.step,
            "lr": state.opt.lr,
            "loss": repr(value),
            "param_norms": {n: float(np.linalg.norm(a)) for n, a in state.pair.online.named_arrays()},
        },
    )


def _assignment(state, Xa):
    H = encode(_assignment_net(state), Xa)
    if not np.all(np.isfinite(H)):
        # the assignment cannot be formed, so neither can the loss
        raise _diverged(state, float("nan"))
    return sinkhorn_self_assignment(cosine_self_similarity(l2_normalize_rows(H)), state.cfg.sinkhorn)


def _step(state, B, variant):
    X1, X2, Xa = _views(state.cfg, B, state.augment_rng, variant)
    A = _assignment(state, Xa)
    res, grads, Z1 = _loss_and_grads(state, X1, X2, A, variant)
    if not np.isfinite(res.value):
        raise _diverged(state, res.value)
    lr = state.opt.lr
    if state.bank is not None:
        apply_sgd(
            [("prototypes", state.bank.C)], [("prototypes", res.grad_wrt_prototypes)], state.opt, lr
        )
        state.bank.renormalize()
    sgd_step(state.pair.online, grads, state.opt)
    if state.cfg.use_momentum:
        ema_update(state.pair)
    return res.value, A.diag_mass(), embedding_min_std(Z1), lr


def _probe_stats(state, X_eval, variant):
    """Loss/assignment statistics before any update, on held-out rows."""
    cfg = state.cfg
    m = min(cfg.batch_size, X_eval.shape[0])
    rng = _derived_rng(cfg.seed, _PROBE_STREAM)
    B = X_eval[:m]
    X1, X2, Xa = _views(cfg, B, rng, variant)
    A = _assignment(state, Xa)
    res, _, Z1 = _loss_and_grads(state, X1, X2, A, variant)
    return res.value, A.diag_mass(), embedding_min_std(Z1), state.opt.lr_at(0)


def evaluate(params, X_train, y_train, X_eval, y_eval, *, rng, knn_k=20, with_linear=False):
    """Diagnostics of the encodings ``H``; returns a partly filled record."""
    H_eval = l2_normalize_rows(encode(params, X_eval))
    H_train = l2_normalize_rows(encode(params, X_train))
    rec = MetricsRecord()
    n_classes = int(np.unique(y_eval).size)
    if n_classes >= 2:
        _, rec.sc_mean, rec.sc_std = silhouette(H_eval, y_eval)
        pseudo = kmeans(H_eval, n_classes, rng)
        rec.ari = adjusted_rand_index(y_eval, pseudo)
    else:
        rec.sc_mean, rec.sc_std, rec.ari = 0.0, 0.0, 1.0
    k = min(knn_k, H_train.shape[0])
    pred = knn_classify(H_train, y_train, H_eval, KnnConfig(k=k))
    rec.knn_accuracy = float(np.mean(pred == y_eval))
    if with_linear:
        rec.linear_accuracy = linear_probe(H_train, y_train, H_eval, y_eval, rng)
    return rec


def _eval_record(state, epoch, X, y, X_eval, y_eval, stats, final):
    rec = evaluate(
        state.pair.online,
        X,
        y,
        X_eval,
        y_eval,
        rng=_derived_rng(state.cfg.seed, _EVAL_STREAM, epoch),
        knn_k=state.cfg.knn_k,
        with_linear=final and state.cfg.linear_probe,
    )
    rec.epoch = epoch
    rec.loss = stats["loss"]
    rec.assignment_diag_mass = stats["diag_mass"]
    rec.collapse_min_std = stats["min_std"]
    rec.lr = stats["lr"]
    return rec


def run(state, X, y, X_eval=None, y_eval=None, stop_at_epoch=None, on_epoch=None):
    """Advance ``state`` to ``cfg.epochs`` (or ``stop_at_epoch``)."""
    cfg = state.cfg
    X = as_matrix(X, "data")
    y = np.asarray(y)
    if X_eval is None:
        X_eval, y_eval = X, y
    m = cfg.batch_size
    if X.shape[0] < m:
        raise BatchTooSmall(f"{X.shape[0]} rows cannot fill a batch of {m}")
    if X.shape[1] != state.in_dim:
        raise ShapeMismatch(f"data has {X.shape[1]} columns, network expects {state.in_dim}")
    variant = _variant(state)
    end = cfg.epochs if stop_at_epoch is None else min(stop_at_epoch, cfg.epochs)

    if state.epoch == 0 and not state.log.epoch_stats and cfg.epochs > 0:
        t0 = time.perf_counter()
        loss, diag, min_std, lr = _probe_stats(state, X_eval, variant)
        stats = {"epoch": 0, "loss": loss, "diag_mass": diag, "min_std": min_std, "lr": lr}
        state.log.epoch_stats.append(stats)
        state.log.records.append(_eval_record(state, 0, X, y, X_eval, y_eval, stats, False))
        state.log.wall_clock.append(time.perf_counter() - t0)

    steps = X.shape[0] // m
    while state.epoch < end:
        t0 = time.perf_counter()
        perm = state.shuffle_rng.permutation(X.shape[0])
        losses, diags, min_std = [], [], np.inf
        lr = state.opt.lr
        for s in range(steps):
            B = X[perm[s * m : (s + 1) * m]]
            loss, diag, zstd, lr = _step(state, B, variant)
            losses.append(loss)
            diags.append(diag)
            min_std = min(min_std, zstd)
        state.epoch += 1
        stats = {
            "epoch": state.epoch,
            "loss": float(np.mean(losses)),
            "diag_mass": float(np.mean(diags)),
            "min_std": float(min_std),
            "lr": float(lr),
        }
        state.log.epoch_stats.append(stats)
        final = state.epoch == cfg.epochs
        if final or state.epoch % cfg.eval_every == 0:
            rec = _eval_record(state, state.epoch, X, y, X_eval, y_eval, stats, final)
            state.log.records.append(rec)
            log.info(
                "epoch %d loss %.4f ari %.3f sc %.3f knn %.3f diag %.3f",
                rec.epoch, rec.loss, rec.ari, rec.sc_mean, rec.knn_accuracy,
                rec.assignment_diag_mass,
            )
        state.log.wall_clock.append(time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(state)
    return state


def train(data, labels, cfg=None, *, eval_data=None, eval_labels=None, stop_at_epoch=None,
          resume_from=None):
    """Train with the self-assignment loss; returns ``(pair, log)``.

    Held-out rows, when given, are used for the diagnostics; otherwise the
    training rows are.  ``resume_from`` continues a checkpointed run.
    """
    cfg = cfg or TrainConfig()
    data = as_matrix(data, "data")
    if resume_from is not None:
        state = load_state(resume_from, cfg, in_dim=data.shape[1])
    else:
        state = init_state(cfg, data.shape[1], data.shape[0])
    run(state, data, labels, eval_data, eval_labels, stop_at_epoch)
    return state.pair, state.log


def train_baseline(data, labels, cfg=None, variant="InfoNCE", **kwargs):
    """The same loop with the InfoNCE or SwAV loss substituted."""
    if variant not in ("InfoNCE", "SwAV"):
        raise ValueError(f"baseline variant must be InfoNCE or SwAV, got {variant!r}")
    cfg = cfg or TrainConfig()
    if cfg.loss.variant != variant:
        cfg = _with_loss(cfg, LossConfig(variant=variant))
    data = as_matrix(data, "data")
    state = init_state(cfg, data.shape[1], data.shape[0], variant)
    run(state, data, labels, kwargs.get("eval_data"), kwargs.get("eval_labels"),
        kwargs.get("stop_at_epoch"))
    return state.pair, state.log, state.bank


def _with_loss(cfg, loss):
    return dataclasses.replace(cfg, loss=loss)


# --- checkpoints -----------------------------------------------------------

MANIFEST = "manifest.json"
PARAMS_F32 = "params.f32"
STATE_F64 = "state.f64"
TIMING = "timing.json"


def _blob(arrays, dtype):
    return b"".join(np.ascontiguousarray(a, dtype=dtype).tobytes() for a in arrays)


def _state_arrays(state):
    named = [("online." + n, a) for n, a in state.pair.online.named_arrays()]
    named += [("momentum." + n, a) for n, a in state.pair.momentum.named_arrays()]
    if state.bank is not None:
        named.append(("prototypes", state.bank.C))
    named += [("velocity." + n, v) for n, v in sorted(state.opt.velocity.items())]
    return named


def checkpoint(state, path):
    """Write a checkpoint directory.

    ``params.f32`` holds the online and momentum parameters in declaration
    order as little-endian float32 (the portable export); ``state.f64``
    holds every array needed for an exact resume in float64.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params = [("online." + n, a) for n, a in state.pair.online.named_arrays()]
    params += [("momentum." + n, a) for n, a in state.pair.momentum.named_arrays()]
    full = _state_arrays(state)
    arch = state.cfg.architecture(state.in_dim)
    manifest = {
        "format": "resa-checkpoint/1",
        "architecture": arch,
        "in_dim": state.in_dim,
        "step": state.opt.step,
        "schedule": {
            "warmup_steps": state.opt.warmup_steps,
            "total_steps": state.opt.total_steps,
        },
        "epoch": state.epoch,
        "config": config_mod.to_dict(state.cfg),
        "config_hash": config_mod.config_hash(config_mod.to_dict(state.cfg)),
        "params": [{"name": n, "shape": list(a.shape)} for n, a in params],
        "state": [{"name": n, "shape": list(a.shape)} for n, a in full],
        "rng": {
            "shuffle": state.shuffle_rng.bit_generator.state,
            "augment": state.augment_rng.bit_generator.state,
        },
        "log": state.log.to_json_dict(),
    }
    (path / PARAMS_F32).write_bytes(_blob([a for _, a in params], "<f4"))
    (path / STATE_F64).write_bytes(_blob([a for _, a in full], "<f8"))
    (path / MANIFEST).write_text(json.dumps(manifest, sort_keys=True))
    # kept apart so that identical runs give identical manifests
    (path / TIMING).write_text(json.dumps({"epoch_seconds": state.log.wall_clock}))
    return path


def _read_manifest(path):
    try:
        return json.loads((Path(path) / MANIFEST).read_text())
    except (OSError, ValueError) as exc:
        raise CorruptCheckpoint(f"cannot read manifest: {exc}") from None


def _split_blob(blob, entries, itemsize, dtype):
    total = sum(int(np.prod(e["shape"])) for e in entries) * itemsize
    if len(blob) != total:
        raise CorruptCheckpoint(f"blob has {len(blob)} bytes, manifest implies {total}")
    out, offset = {}, 0
    for e in entries:
        n = int(np.prod(e["shape"]))
        out[e["name"]] = (
            np.frombuffer(blob, dtype=dtype, count=n, offset=offset)
            .astype(np.float64)
            .reshape(e["shape"])
        )
        offset += n * itemsize
    return out


def load_state(path, cfg=None, in_dim=None):
    """Rebuild the full training state stored at ``path``."""
    manifest = _read_manifest(path)
    try:
        stored_cfg = config_mod.from_dict(TrainConfig, manifest["config"])
        stored_in = manifest["in_dim"]
        entries = manifest["state"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"malformed manifest: {exc}") from None
    cfg = cfg or stored_cfg
    if in_dim is not None and in_dim != stored_in:
        raise ConfigMismatch(f"checkpoint input dim {stored_in} != data dim {in_dim}")
    if cfg.architecture(stored_in) != manifest["architecture"]:
        raise ConfigMismatch("checkpoint architecture differs from the requested config")
    try:
        blob = (Path(path) / STATE_F64).read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read state blob: {exc}") from None
    arrays = _split_blob(blob, entries, 8, "<f8")

    variant = manifest["log"]["config"]["loss"]["variant"]
    state = init_state(cfg, stored_in, cfg.batch_size, variant)
    state.opt.warmup_steps = int(manifest["schedule"]["warmup_steps"])
    state.opt.total_steps = int(manifest["schedule"]["total_steps"])
    for prefix, params in (("online.", state.pair.online), ("momentum.", state.pair.momentum)):
        for name, a in params.named_arrays():
            key = prefix + name
            if key not in arrays or arrays[key].shape != a.shape:
                raise CorruptCheckpoint(f"missing or misshapen array {key}")
            a[...] = arrays[key]
    if state.bank is not None:
        state.bank.C = arrays["prototypes"].copy()
    state.opt.velocity = {
        k[len("velocity."):]: v.copy() for k, v in arrays.items() if k.startswith("velocity.")
    }
    state.opt.step = int(manifest["step"])
    state.epoch = int(manifest["epoch"])
    state.shuffle_rng.bit_generator.state = manifest["rng"]["shuffle"]
    state.augment_rng.bit_generator.state = manifest["rng"]["augment"]
    try:
        wall_clock = json.loads((Path(path) / TIMING).read_text())["epoch_seconds"]
    except (OSError, ValueError, KeyError):
        wall_clock = ()
    state.log = RunLog.from_json_dict(manifest["log"], wall_clock)
    return state


def resume(path, cfg=None):
    """Load a checkpoint; returns ``(pair, cfg, step)``."""
    manifest = _read_manifest(path)
    state = load_state(path, cfg)
    return state.pair, config_mod.from_dict(TrainConfig, manifest["config"]), state.opt.step
