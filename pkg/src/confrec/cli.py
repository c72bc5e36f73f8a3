"""Command-line entry point: ``confrec {train,evaluate,reliability,tune-tau,split-export}``.

Settings are resolved as, from lowest to highest precedence: built-in
defaults, ``CONF_REC_SEED`` (seed only), the checkpoint's config snapshot
(commands that read a checkpoint), the ``--config`` file, explicit flags.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .calibration import MEAN_MODES, TAU_GRID, CalibrationParams
from .checkpoint import Checkpoint
from .data import export_split, load_adjacency_file, split
from .errors import ConfRecError, DimensionMismatch, InputError, NumericalError
from .graph import build_graph, normalize
from .metrics import (RELIABILITY_MODES, accuracy_at_n, collect_topk, format_percent,
                      precision_at_n, reliability, tune_tau)
from .model import EmbeddingState, propagate
from .trainer import TrainConfig, fit

logger = logging.getLogger("confrec")

CHECKPOINT_NAME = "checkpoint.bin"
LOG_NAME = "train_log.jsonl"
SEED_ENV = "CONF_REC_SEED"


class UsageError(InputError):
    pass


def _float_tuple(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    values = tuple(float(v) for v in str(text).replace(",", " ").split())
    if not values:
        raise ValueError("empty list")
    return values


def _flag(text) -> bool:
    if isinstance(text, bool):
        return text
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# setting name -> (parser, default)
SETTINGS = {
    "data": (str, None),
    "seed": (int, 0),
    "epochs": (int, TrainConfig.epochs),
    "batch_size": (int, TrainConfig.batch_size),
    "lr": (float, TrainConfig.learning_rate),
    "dim": (int, TrainConfig.embed_dim),
    "layers": (int, TrainConfig.layers),
    "l2": (float, TrainConfig.l2_weight),
    "conf_weight": (float, TrainConfig.conf_weight),
    "negatives": (int, TrainConfig.negatives),
    "patience": (int, TrainConfig.patience),
    "topn": (int, 20),
    "tau": (float, None),
    "tau_grid": (_float_tuple, TAU_GRID),
    "mean_mode": (str, "candidates"),
    "calibrate": (_flag, False),
    "reliability_mode": (str, "item"),
    "out": (str, "."),
    "threads": (int, 1),
}

# setting name -> TrainConfig field
_TRAIN_FIELDS = {
    "seed": "seed", "epochs": "epochs", "batch_size": "batch_size", "lr": "learning_rate",
    "dim": "embed_dim", "layers": "layers", "l2": "l2_weight", "conf_weight": "conf_weight",
    "negatives": "negatives", "patience": "patience", "topn": "topn",
}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys equal underscores."""
    settings = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected `key = value`")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in SETTINGS:
                raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
            settings[key] = _coerce(key, value, f"{path}:{lineno}")
    return settings


def _coerce(key, value, where):
    try:
        return SETTINGS[key][0](value)
    except ValueError as exc:
        raise UsageError(f"{where}: bad value for {key}: {exc}") from exc


def resolve_settings(flags: dict, snapshot: dict = None) -> dict:
    settings = {key: default for key, (_, default) in SETTINGS.items()}
    env_seed = os.environ.get(SEED_ENV)
    if env_seed not in (None, ""):
        settings["seed"] = _coerce("seed", env_seed, SEED_ENV)
    for key, value in (snapshot or {}).items():
        if key in SETTINGS:
            settings[key] = _coerce(key, value, "checkpoint config")
    if flags.get("config"):
        settings.update(read_config_file(flags["config"]))
    settings.update({k: v for k, v in flags.items() if k in SETTINGS})
    if settings["topn"] < 1:
        raise UsageError("topn must be >= 1")
    if settings["threads"] < 1:
        raise UsageError("threads must be >= 1")
    if settings["reliability_mode"] not in RELIABILITY_MODES:
        raise UsageError(f"reliability mode must be one of {RELIABILITY_MODES}")
    if settings["mean_mode"] not in MEAN_MODES:
        raise UsageError(f"mean mode must be one of {MEAN_MODES}")
    return settings


def train_config(settings: dict) -> TrainConfig:
    config = TrainConfig(**{field: settings[key] for key, field in _TRAIN_FIELDS.items()})
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return config


def _require_data(settings):
    if not settings["data"]:
        raise UsageError("no dataset given (use --data or a config file)")
    return settings["data"]


def _load_split(settings):
    dataset = load_adjacency_file(_require_data(settings))
    return dataset, split(dataset, settings["seed"])


def snapshot(settings: dict, config: TrainConfig) -> dict:
    """Config stored in a checkpoint; everything needed to rebuild the split and graph."""
    snap = {key: getattr(config, field) for key, field in _TRAIN_FIELDS.items()}
    snap["data"] = os.path.abspath(settings["data"])
    return snap


def load_model(path, flags: dict):
    """Read a checkpoint and rebuild the propagated state on its split."""
    ckpt = Checkpoint.read(path)
    settings = resolve_settings(flags, ckpt.config)
    _, split_ds = _load_split(settings)
    n, m, _, layers = ckpt.dims
    if (n, m) != (split_ds.num_users, split_ds.num_items):
        raise DimensionMismatch(
            f"{path}: checkpoint has {n} users / {m} items, dataset has "
            f"{split_ds.num_users} / {split_ds.num_items}")
    adj = normalize(build_graph(split_ds.train, split_ds.num_users, split_ds.num_items))
    base = EmbeddingState(ckpt.user_emb.astype(np.float64), ckpt.item_emb.astype(np.float64))
    return propagate(base, adj, layers), split_ds, settings


def _calibration(state, split_ds, settings):
    """Explicit ``--tau`` if given, otherwise the validation-tuned value."""
    if settings["tau"] is not None:
        return CalibrationParams(settings["tau"], settings["mean_mode"])
    best, _ = tune_tau(state, split_ds, settings["tau_grid"], settings["topn"],
                       settings["reliability_mode"], settings["mean_mode"], settings["threads"])
    return CalibrationParams(best, settings["mean_mode"])


def cmd_train(flags: dict, out=sys.stdout) -> int:
    settings = resolve_settings(flags)
    config = train_config(settings)
    _, split_ds = _load_split(settings)
    os.makedirs(settings["out"], exist_ok=True)
    log_path = os.path.join(settings["out"], LOG_NAME)
    with open(log_path, "w", encoding="utf-8", newline="\n") as log:
        def on_epoch(stats):
            log.write(stats.to_json() + "\n")
            log.flush()
        result = fit(split_ds, config, on_epoch)
    ckpt = Checkpoint(result.state.user_emb, result.state.item_emb, config.layers,
                      snapshot(settings, config))
    path = os.path.join(settings["out"], CHECKPOINT_NAME)
    ckpt.write(path)
    last = result.history[-1]
    print(f"epochs\t{len(result.history)}\tbest_epoch\t{result.best_epoch}\t"
          f"bpr\t{last.bpr:.6f}\tconf\t{last.conf:.6f}", file=out)
    print(f"checkpoint\t{path}", file=out)
    return 0


def cmd_evaluate(flags: dict, out=sys.stdout) -> int:
    state, split_ds, settings = load_model(flags["checkpoint"], flags)
    n = settings["topn"]
    rows = [("raw", None)]
    if settings["calibrate"]:
        rows.append(("calibrated", _calibration(state, split_ds, settings)))
    for label, params in rows:
        results = collect_topk(state, split_ds, "test", n, params, settings["threads"])
        line = (f"{label}\tprecision@{n}\t{format_percent(precision_at_n(results, n))}\t"
                f"accuracy@{n}\t{format_percent(accuracy_at_n(results, n=n))}")
        if params is not None:
            line += f"\ttau\t{params.tau!r}"
        print(line, file=out)
    return 0


def cmd_reliability(flags: dict, out=sys.stdout) -> int:
    state, split_ds, settings = load_model(flags["checkpoint"], flags)
    params = _calibration(state, split_ds, settings)
    os.makedirs(settings["out"], exist_ok=True)
    for label, calib in (("raw", None), ("calibrated", params)):
        results = collect_topk(state, split_ds, "test", settings["topn"], calib, settings["threads"])
        report = reliability(results, settings["reliability_mode"])
        path = os.path.join(settings["out"], f"reliability_{label}.csv")
        report.write_csv(path)
        print(f"{label}\tece\t{report.ece!r}\tcsv\t{path}", file=out)
    print(f"tau\t{params.tau!r}", file=out)
    return 0


def cmd_tune_tau(flags: dict, out=sys.stdout) -> int:
    state, split_ds, settings = load_model(flags["checkpoint"], flags)
    best, ece = tune_tau(state, split_ds, settings["tau_grid"], settings["topn"],
                         settings["reliability_mode"], settings["mean_mode"], settings["threads"])
    for tau, value in ece.items():
        print(f"tau\t{tau!r}\tece\t{value!r}", file=out)
    print(f"best_tau\t{best!r}", file=out)
    return 0


def cmd_split_export(flags: dict, out=sys.stdout) -> int:
    settings = resolve_settings(flags)
    dataset, split_ds = _load_split(settings)
    for path in export_split(split_ds, dataset, settings["out"]):
        print(path, file=out)
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "reliability": cmd_reliability,
    "tune-tau": cmd_tune_tau,
    "split-export": cmd_split_export,
}


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors (exit 1); exit 2 is reserved for numerical failure
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--data", help="dataset file (adjacency or tab-separated pairs)")
    common.add_argument("--seed", type=int, help=f"split and training seed (fallback: ${SEED_ENV})")
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr", type=float, help="Adam learning rate")
    common.add_argument("--dim", type=int, help="embedding size")
    common.add_argument("--layers", type=int, help="propagation layers")
    common.add_argument("--l2", type=float, help="L2 coefficient on batch embeddings")
    common.add_argument("--conf-weight", type=float, help="confidence loss weight")
    common.add_argument("--negatives", type=int, help="negatives per positive")
    common.add_argument("--patience", type=int, help="early-stopping patience; 0 disables")
    common.add_argument("--topn", type=int, help="list length N (default 20)")
    common.add_argument("--tau", type=float, help="calibration temperature; tuned on validation if unset")
    common.add_argument("--tau-grid", type=_float_tuple, help="comma-separated tau candidates")
    common.add_argument("--mean-mode", choices=MEAN_MODES)
    common.add_argument("--calibrate", action="store_true", help="also report calibrated scores")
    common.add_argument("--reliability-mode", choices=RELIABILITY_MODES)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads for scoring")

    parser = _Parser(prog="confrec", description="Confidence-aware graph recommender experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        cmd = sub.add_parser(name, parents=[common])
        if name in ("evaluate", "reliability", "tune-tau"):
            cmd.add_argument("checkpoint", help="checkpoint file written by `train`")
    return parser


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        flags = vars(build_parser().parse_args(argv))
        command = flags.pop("command")
        return COMMANDS[command](flags, out)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfRecError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
