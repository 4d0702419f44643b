"""Command line entry point: ``resa <subcommand> ...``.

Subcommands: train, metrics, sinkhorn, gradcheck, compare.

Run configs are JSON.  Training fields sit at the top level (``seed``,
``loss.variant``), the synthetic data under ``data.`` (``data.n_classes``),
plus ``heldout_per_class`` and ``data_seed``.  Nested objects and dotted
keys are interchangeable, and every key can be overridden by a flag of the
same name (``--loss.variant InfoNCE``); flags win over the file.

Errors go to stderr as ``ERROR:<kind>:<message>``.  Exit codes: 0 success,
1 bad input or config (or a failed gradient check), 2 non-finite loss.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as config_mod
from . import gradcheck
from .assignment import SinkhornConfig, sinkhorn_self_assignment
from .config import ExperimentConfig
from .datagen import generate_with_heldout
from .errors import ConfigError, NonFiniteLoss, ResaError
from .matrix_io import load_labels, load_matrix, save_matrix
from .metrics import (
    KnnConfig,
    MetricsRecord,
    adjusted_rand_index,
    embedding_min_std,
    kmeans,
    knn_classify,
    silhouette,
)
from .numerics import l2_normalize_rows, make_rng
from .trainer import checkpoint, init_state, load_state, run, train_baseline

log = logging.getLogger("resa")

_EXPERIMENT_FIELDS = ("heldout_per_class", "data_seed")
COMPARE_METHODS = ("ReSA", "InfoNCE", "SwAV")
COMPARE_COLUMNS = (
    "method",
    "epoch",
    "loss",
    "sc_mean",
    "sc_std",
    "ari",
    "knn_acc",
    "linear_acc",
    "collapse_min_std",
    "diag_mass",
)


# --- config handling ---------------------------------------------------------


def config_keys():
    """CLI key -> leaf type.  Training fields drop their ``train.`` prefix."""
    out = {}
    for key, tp in config_mod.experiment_keys().items():
        out[key[len("train."):] if key.startswith("train.") else key] = tp
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        pass
    if "," in text:
        # bare comma lists for tuple fields: --network.encoder_hidden 128,64
        return [p.strip() for p in text.split(",") if p.strip()]
    return text


def build_config(flat):
    """Turn a flat or nested CLI config dict into an ``ExperimentConfig``."""
    flat = config_mod.flatten(flat)
    known = config_keys()
    for key in flat:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    train, data, top = {}, {}, {}
    for key, value in flat.items():
        if key.startswith("data."):
            data[key[len("data."):]] = value
        elif key in _EXPERIMENT_FIELDS:
            top[key] = value
        else:
            train[key] = value
    nested = dict(top)
    nested["train"] = config_mod.unflatten(train)
    nested["data"] = data
    return config_mod.from_dict(ExperimentConfig, nested)


def experiment_to_flat(exp):
    flat = config_mod.flatten(config_mod.to_dict(exp.train))
    flat.update({"data." + k: v for k, v in config_mod.to_dict(exp.data).items()})
    flat.update({k: getattr(exp, k) for k in _EXPERIMENT_FIELDS})
    return flat


def load_config(path, overrides):
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    flat = config_mod.flatten(raw)
    flat.update(overrides)
    return build_config(flat)


def _add_config_flags(parser):
    group = parser.add_argument_group("config overrides (dotted keys; flags win over --config)")
    for key, tp in sorted(config_keys().items()):
        name = getattr(tp, "__name__", str(tp))
        group.add_argument(f"--{key}", dest=f"cfg:{key}", metavar=name.upper(), default=None)


def _overrides(args):
    out = {}
    for dest, value in vars(args).items():
        if dest.startswith("cfg:") and value is not None:
            out[dest[4:]] = _parse_value(value)
    return out


def _dataset(exp):
    seed = exp.train.seed if exp.data_seed is None else exp.data_seed
    return generate_with_heldout(exp.data, make_rng(seed), exp.heldout_per_class)


def _load_inputs(args, exp):
    """Synthetic data from the config, or feature/label files when given."""
    if args.data is None:
        X, y, Xh, yh = _dataset(exp)
        return X, y, (Xh if Xh.size else None), (yh if yh.size else None)
    if args.labels is None:
        raise ConfigError("--data needs --labels")
    X, y = load_matrix(args.data), load_labels(args.labels)
    return X, y, None, None


# --- subcommands -------------------------------------------------------------


def cmd_train(args):
    exp = load_config(args.config, _overrides(args))
    X, y, Xh, yh = _load_inputs(args, exp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        state = load_state(args.resume, exp.train, in_dim=X.shape[1])
    else:
        state = init_state(exp.train, X.shape[1], X.shape[0])
    (out / "config.json").write_text(json.dumps(experiment_to_flat(exp), indent=2, sort_keys=True))
    try:
        run(state, X, y, Xh, yh, stop_at_epoch=args.stop_at_epoch)
    except NonFiniteLoss as exc:
        (out / "nonfinite_dump.json").write_text(json.dumps(exc.dump, indent=2, sort_keys=True))
        raise
    state.log.save(out)
    checkpoint(state, out / "checkpoint")
    final = state.log.records[-1] if state.log.records else None
    if final is not None:
        print(json.dumps(final.to_dict(), sort_keys=True))
    return 0


def cmd_metrics(args):
    X = load_matrix(args.features)
    y = load_labels(args.labels)
    rng = make_rng(args.seed)
    rec = MetricsRecord()
    _, rec.sc_mean, rec.sc_std = silhouette(X, y, metric=args.metric)
    n_classes = int(np.unique(y).size)
    rec.ari = adjusted_rand_index(y, kmeans(l2_normalize_rows(X), n_classes, rng))
    Xn = l2_normalize_rows(X)
    k = min(args.knn_k, X.shape[0] - 1)
    pred = knn_classify(Xn, y, Xn, KnnConfig(k=k), exclude_self=True)
    rec.knn_accuracy = float(np.mean(pred == y))
    rec.collapse_min_std = embedding_min_std(X)
    rec.loss = None
    print(json.dumps(rec.to_dict(), sort_keys=True))
    return 0


def cmd_sinkhorn(args):
    S = load_matrix(args.matrix)
    A = sinkhorn_self_assignment(S, SinkhornConfig(args.epsilon, args.iterations))
    out = args.out or str(Path(args.matrix).with_suffix("")) + ".assign" + Path(args.matrix).suffix
    save_matrix(out, A.values)
    report = {
        "output": out,
        "m": A.m,
        "epsilon": args.epsilon,
        "iterations": args.iterations,
        "row_marginal_error": A.row_marginal_error,
        "col_marginal_error": A.col_marginal_error,
        "diag_mass": A.diag_mass(),
    }
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_gradcheck(args):
    flip = -1.0 if args.inject_sign_flip else 1.0
    results = gradcheck.run_all(args.seed, flip=flip)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(
            f"{r.name:<22} worst_rel_err={r.worst:.3e} tol={r.tolerance:.0e} "
            f"checked={r.checked} skipped={r.skipped} {status}"
        )
    return 0 if all(r.passed for r in results) else 1


def _compare_row(method, rec):
    row = {
        "method": method,
        "epoch": rec.epoch,
        "loss": rec.loss,
        "sc_mean": rec.sc_mean,
        "sc_std": rec.sc_std,
        "ari": rec.ari,
        "knn_acc": rec.knn_accuracy,
        "linear_acc": rec.linear_accuracy,
        "collapse_min_std": rec.collapse_min_std,
        "diag_mass": rec.assignment_diag_mass,
    }
    cells = []
    for c in COMPARE_COLUMNS:
        v = row[c]
        if isinstance(v, (str, int)):
            cells.append(str(v))
        elif v is None:
            cells.append("")
        else:
            cells.append(repr(float(v)))
    return ",".join(cells)


def cmd_compare(args):
    exp = load_config(args.config, _overrides(args))
    X, y, Xh, yh = _load_inputs(args, exp)
    lines = [",".join(COMPARE_COLUMNS)]
    out = Path(args.out) if args.out else None
    for method in COMPARE_METHODS:
        cfg = exp.train
        if method == "ReSA":
            cfg = dataclasses.replace(cfg, loss=dataclasses.replace(cfg.loss, variant="ReSA"))
            state = init_state(cfg, X.shape[1], X.shape[0])
            run(state, X, y, Xh, yh)
            runlog = state.log
        else:
            _, runlog, _ = train_baseline(X, y, cfg, variant=method, eval_data=Xh, eval_labels=yh)
        if out is not None:
            runlog.save(out / method)
        lines.append(_compare_row(method, runlog.records[-1]))
    text = "\n".join(lines) + "\n"
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.csv").write_text(text)
    sys.stdout.write(text)
    return 0


# --- parser ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse with the CLI's error convention (exit 1, machine prefix)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"ERROR:Config:{message}\n")


def build_parser():
    parser = _Parser(prog="resa", description="Self-assignment SSL laboratory.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write a run log and checkpoint")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.add_argument("--stop-at-epoch", type=int, default=None, help="stop early (for checkpointing)")
    p.add_argument("--data", help="feature matrix file instead of synthetic data")
    p.add_argument("--labels", help="label file matching --data")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("metrics", help="clustering and k-NN metrics of a feature file")
    p.add_argument("features", help="feature matrix file (csv or binary)")
    p.add_argument("labels", help="label file, one integer per line")
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p.add_argument("--knn-k", type=int, default=20)
    p.add_argument("--seed", type=int, default=0, help="k-means seed")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sinkhorn", help="self-assignment of a similarity matrix")
    p.add_argument("matrix", help="square similarity matrix file")
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--out", help="assignment output file (default: <matrix>.assign.<ext>)")
    p.set_defaults(func=cmd_sinkhorn)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradient suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--inject-sign-flip",
        action="store_true",
        help="negate every analytic gradient (mutation check; must fail)",
    )
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("compare", help="ReSA, InfoNCE and SwAV on the same data and seed")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="directory for per-method run logs and compare.csv")
    p.add_argument("--data", help="feature matrix file instead of synthetic data")
    p.add_argument("--labels", help="label file matching --data")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    threads = int(os.environ.get("RESA_THREADS", "1"))
    try:
        with threadpool_limits(limits=threads):
            return args.func(args)
    except NonFiniteLoss as exc:
        print(f"ERROR:{exc.kind}:{exc}", file=sys.stderr)
        return 2
    except ResaError as exc:
        print(f"ERROR:{exc.kind}:{exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"ERROR:{type(exc).__name__}:{exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
