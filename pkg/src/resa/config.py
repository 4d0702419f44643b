"""Run configuration: nested dataclasses plus dotted-key flattening.

A config file is a JSON object whose keys are either nested objects or
dotted paths (``"loss.tau": 0.4``); both spellings address the same field.
Unknown keys are rejected by name.
"""

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from typing import Optional

from .assignment import SinkhornConfig
from .datagen import AugmentSpec, DatasetSpec
from .errors import ConfigError
from .objectives import LossConfig


@dataclass(frozen=True)
class NetworkConfig:
    encoder_hidden: tuple = (128,)
    encoding_dim: int = 64
    projector_hidden: tuple = (64,)
    embedding_dim: int = 32
    predictor_hidden: tuple = (64,)

    def dims(self, in_dim, use_predictor):
        enc = (in_dim,) + tuple(self.encoder_hidden) + (self.encoding_dim,)
        proj = (self.encoding_dim,) + tuple(self.projector_hidden) + (self.embedding_dim,)
        pred = None
        if use_predictor:
            pred = (self.embedding_dim,) + tuple(self.predictor_hidden) + (self.embedding_dim,)
        return enc, proj, pred


@dataclass(frozen=True)
class OptimConfig:
    base_lr: float = 0.3
    weight_decay: float = 1e-4
    momentum: float = 0.9
    warmup_epochs: int = 2
    min_lr_fraction: float = 0.1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    seed: int = 7
    eval_every: int = 10
    use_momentum: bool = True
    momentum_coeff: float = 0.99
    use_predictor: bool = False
    # momentum_encoder | online_encoder
    assignment_source: str = "momentum_encoder"
    # 1 or 2 picks the view that gets the weak augmentation; 0 means both standard
    weak_view_index: int = 1
    # False: the weak view only feeds the assignment, both loss views are standard
    weak_view_in_loss: bool = True
    n_prototypes: int = 16
    knn_k: int = 20
    linear_probe: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    augment_standard: AugmentSpec = field(default_factory=AugmentSpec)
    augment_weak: AugmentSpec = field(default_factory=AugmentSpec.weak)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.assignment_source not in ("momentum_encoder", "online_encoder"):
            raise ConfigError(f"unknown assignment_source {self.assignment_source!r}")
        if self.weak_view_index not in (0, 1, 2):
            raise ConfigError("weak_view_index must be 0, 1 or 2")
        if self.epochs < 0 or self.eval_every < 1:
            raise ConfigError("epochs must be >= 0 and eval_every >= 1")

    def architecture(self, in_dim):
        enc, proj, pred = self.network.dims(in_dim, self.use_predictor)
        return {"encoder": list(enc), "projector": list(proj), "predictor": list(pred) if pred else None}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a CLI run needs: training settings plus the synthetic data."""

    train: TrainConfig = field(default_factory=TrainConfig)
    data: DatasetSpec = field(default_factory=DatasetSpec)
    heldout_per_class: int = 64
    data_seed: Optional[int] = None


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def _coerce(tp, value, key):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, key)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, prefix=key + ".")
    if tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return tuple(int(v) for v in value)
    if tp is bool:
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return bool(value)
    if tp is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        return float(value)
    if tp is str:
        return str(value)
    return value


def from_dict(cls, data, prefix=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown config key {prefix + key!r}")
    kwargs = {k: _coerce(hints[k], v, prefix + k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from None


def flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(flatten(v, prefix + k + "."))
        else:
            out[prefix + k] = v
    return out


def unflatten(flat):
    out = {}
    for key, value in flat.items():
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"config key {key!r} conflicts with a scalar")
        node[parts[-1]] = value
    return out


def experiment_keys():
    """Dotted key -> leaf type for every addressable field."""
    out = {}

    def walk(cls, prefix):
        hints = typing.get_type_hints(cls)
        for f in dataclasses.fields(cls):
            tp = hints[f.name]
            if dataclasses.is_dataclass(tp):
                walk(tp, prefix + f.name + ".")
            else:
                out[prefix + f.name] = tp

    walk(ExperimentConfig, "")
    return out


def config_hash(d):
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
