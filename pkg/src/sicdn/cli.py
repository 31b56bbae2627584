"""Command-line entry point.

Commands: ``train`` (pretrain plus importance-guided training), ``sweep``
(one run per lambda), ``explain`` (importance CSV for a checkpoint),
``evaluate`` (test metrics for a checkpoint), ``gen-data`` (synthetic
dataset to disk).

Configuration comes from a JSON document whose keys mirror the library
configs; every key has a default, unknown keys are rejected, and flag
values override file values which override defaults. The seed resolves as
flag, then config, then the SICDN_SEED environment variable, then 0.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .data import SynthConfig, load_dir, save_dataset, synth_generate
from .errors import ConfigError, DataError, NumericError, SicdnError
from .metrics import classify_metrics, roc_auc
from .model import PRESETS, extract_features, load_checkpoint, save_checkpoint
from .shap import ShapConfig, batch_mean_abs, gradient_shap, minmax_normalize, write_importance_csv
from .training import TrainConfig, evaluate_scores, lambda_sweep, pretrain, sicdn_train

DEFAULT_CONFIG = {
    "backbone": {
        "preset": "tiny",
        "num_classes": 2,
        "input_shape": [1, 32, 32],
        "seed": 0,
    },
    "train": {
        "epochs": 100,
        "batch_size": 8,
        "learning_rate": 1e-4,
        "lambda": 1.0,
        "lambdas": [0.40, 0.45, 0.50, 0.55, 0.60, 1.00],
        "scale_cadence": "per_epoch",
        "shap_refresh_every": 1,
        "shap_batch": None,
        "num_path_samples": 64,
        "noise_std": 0.01,
        "background_size": 16,
        "abs_before_mean": False,
        "pretrain_epochs": None,
    },
    "synth": {
        "image_size": [32, 32],
        "train_per_class": 200,
        "val_per_class": 40,
        "test_per_class": 40,
        "stripe_period": 4,
        "foreground": 0.8,
        "background": 0.2,
        "noise_std": 0.1,
    },
    "data_dir": None,
    "out_dir": None,
    "seed": None,
}


class _Parser(argparse.ArgumentParser):
    """Routes argparse usage errors through the package error hierarchy."""

    def error(self, message):
        raise ConfigError(message)


def _merge_config(defaults: dict, user: dict, prefix: str = "") -> dict:
    for key in user:
        if key not in defaults:
            raise ConfigError(f"unknown config key {prefix + key!r}")
    merged = {}
    for key, default in defaults.items():
        if key not in user:
            merged[key] = default
        elif isinstance(default, dict) and isinstance(user[key], dict):
            merged[key] = _merge_config(default, user[key], prefix=f"{prefix}{key}.")
        else:
            merged[key] = user[key]
    return merged


def _load_config(path: str | None) -> dict:
    if path is None:
        return _merge_config(DEFAULT_CONFIG, {})
    try:
        with open(path) as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return _merge_config(DEFAULT_CONFIG, user)


def _resolve_seed(args, config) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if config["seed"] is not None:
        value = config["seed"]
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"config key 'seed' must be an integer, got {value!r}")
        return value
    env = os.environ.get("SICDN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"SICDN_SEED must be an integer, got {env!r}") from None
    return 0


def _resolve_out_dir(args, config, required: bool = True) -> str | None:
    out = getattr(args, "out", None) or config["out_dir"]
    if out is None and required:
        raise ConfigError("an output directory is required (--out or config key 'out_dir')")
    return out


def _backbone_from(config, seed: int, num_classes: int):
    section = config["backbone"]
    preset = section["preset"]
    if preset not in PRESETS:
        raise ConfigError(f"backbone.preset must be one of {sorted(PRESETS)}, got {preset!r}")
    if section["num_classes"] != num_classes:
        raise ConfigError(
            f"backbone.num_classes ({section['num_classes']}) does not match "
            f"the dataset class count ({num_classes})"
        )
    input_shape = tuple(section["input_shape"])
    if len(input_shape) != 3:
        raise ConfigError(f"backbone.input_shape must be [c, h, w], got {section['input_shape']}")
    return PRESETS[preset](num_classes=num_classes, seed=section["seed"] + seed, input_shape=input_shape)


def _synth_config(config, seed: int) -> SynthConfig:
    section = config["synth"]
    try:
        cfg = SynthConfig(
            image_size=tuple(section["image_size"]),
            train_per_class=section["train_per_class"],
            val_per_class=section["val_per_class"],
            test_per_class=section["test_per_class"],
            stripe_period=section["stripe_period"],
            foreground=section["foreground"],
            background=section["background"],
            noise_std=section["noise_std"],
            seed=seed,
        )
    except TypeError as exc:
        raise ConfigError(f"invalid synth config: {exc}") from None
    cfg.validate()
    return cfg


def _train_config(config, args, seed: int, out_dir: str | None) -> TrainConfig:
    section = dict(config["train"])
    for flag, key in (
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("lr", "learning_rate"),
        ("cadence", "scale_cadence"),
        ("pretrain_epochs", "pretrain_epochs"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            section[key] = value
    lambdas = section["lambdas"]
    if getattr(args, "lambdas", None) is not None:
        try:
            lambdas = [float(v) for v in args.lambdas.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"--lambdas must be comma-separated numbers, got {args.lambdas!r}") from None
    cfg = TrainConfig(
        epochs=section["epochs"],
        batch_size=section["batch_size"],
        learning_rate=section["learning_rate"],
        lambdas=tuple(lambdas),
        scale_cadence=section["scale_cadence"],
        shap_refresh_every=section["shap_refresh_every"],
        shap_batch=section["shap_batch"],
        num_path_samples=section["num_path_samples"],
        noise_std=section["noise_std"],
        background_size=section["background_size"],
        abs_before_mean=section["abs_before_mean"],
        pretrain_epochs=section["pretrain_epochs"],
        seed=seed,
        out_dir=out_dir,
    )
    cfg.validate()
    return cfg


def _load_dataset(config, args, seed: int):
    data_dir = getattr(args, "data", None) or config["data_dir"]
    input_shape = tuple(config["backbone"]["input_shape"])
    if data_dir is not None:
        return load_dir(data_dir, expected_shape=input_shape)
    synth = _synth_config(config, seed)
    if (1, *synth.image_size) != input_shape:
        raise ConfigError(
            f"synth.image_size {list(synth.image_size)} does not match "
            f"backbone.input_shape {list(input_shape)}"
        )
    return synth_generate(synth)


def _single_lambda(config, args) -> float:
    value = args.lam if getattr(args, "lam", None) is not None else config["train"]["lambda"]
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"train.lambda must lie in [0, 1], got {value}")
    return float(value)


def _cmd_train(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out_dir = _resolve_out_dir(args, config)
    dataset = _load_dataset(config, args, seed)
    cfg = _train_config(config, args, seed, out_dir)
    backbone = _backbone_from(config, seed, dataset.num_classes)
    lam = _single_lambda(config, args)

    pre = pretrain(backbone, cfg, dataset)
    ckpt_dir = Path(out_dir) / "ckpt"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(pre.model, ckpt_dir / "best_val.sicd")
    model, report = sicdn_train(pre.model, cfg, dataset, lam=lam)
    best = report.best_record()
    selected = report.val_selected_record()
    print(
        f"pretrain best epoch {pre.best_epoch}; "
        f"top test accuracy {best.test_acc:.4f} at epoch {best.epoch}; "
        f"val-selected test accuracy {selected.test_acc:.4f} at epoch {selected.epoch}; "
        f"report written to {Path(out_dir) / 'report.csv'}"
    )
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out_dir = _resolve_out_dir(args, config)
    dataset = _load_dataset(config, args, seed)
    cfg = _train_config(config, args, seed, out_dir)
    backbone = _backbone_from(config, seed, dataset.num_classes)
    result = lambda_sweep(backbone, cfg, dataset, jobs=args.jobs)
    print(f"{len(result.rows)} lambda runs written to {Path(out_dir) / 'sweep.csv'}")
    return 0


def _cmd_explain(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out_dir = _resolve_out_dir(args, config)
    dataset = _load_dataset(config, args, seed)
    cfg = _train_config(config, args, seed, out_dir)
    backbone = _backbone_from(config, seed, dataset.num_classes)
    model = load_checkpoint(args.checkpoint, backbone)

    import numpy as np

    train_samples = dataset.splits["train"]
    m = min(cfg.shap_batch or cfg.batch_size, len(train_samples))
    rng = np.random.default_rng(seed)
    target_idx = rng.choice(len(train_samples), size=m, replace=False)
    bg_idx = rng.choice(len(train_samples), size=min(cfg.background_size, len(train_samples)), replace=False)
    targets = extract_features(model, np.stack([train_samples[i][0] for i in target_idx])).data
    background = extract_features(model, np.stack([train_samples[i][0] for i in bg_idx])).data
    shap_cfg = ShapConfig(
        num_path_samples=cfg.num_path_samples,
        noise_std=cfg.noise_std,
        background_size=len(bg_idx),
        seed=seed,
        abs_before_mean=cfg.abs_before_mean,
    )
    raw = gradient_shap(model, targets, background, shap_cfg)
    reduced = batch_mean_abs(raw, abs_before_mean=cfg.abs_before_mean)
    normalized = minmax_normalize(reduced)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    out_path = Path(out_dir) / "importance.csv"
    write_importance_csv(out_path, raw, reduced, normalized)
    print(f"importance matrix written to {out_path}")
    return 0


def _cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    dataset = _load_dataset(config, args, seed)
    backbone = _backbone_from(config, seed, dataset.num_classes)
    model = load_checkpoint(args.checkpoint, backbone)
    scores, labels = evaluate_scores(model, dataset.splits["test"])
    accuracy, recall, f1 = classify_metrics(scores, labels)
    _, auc = roc_auc(scores, labels)
    print(f"accuracy {accuracy:.4f}")
    print(f"recall {recall:.4f}")
    print(f"f1 {f1:.4f}")
    print(f"auc {auc:.4f}")
    return 0


def _cmd_gen_data(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out_dir = _resolve_out_dir(args, config)
    synth = _synth_config(config, seed)
    dataset = synth_generate(synth)
    save_dataset(dataset, out_dir, generator_config=synth)
    total = sum(len(s) for s in dataset.splits.values())
    print(f"{total} images written under {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sicdn", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides config and SICDN_SEED)")
        p.add_argument("--data", help="dataset directory (synthetic data when omitted)")
        if needs_out:
            p.add_argument("--out", help="output directory")

    p_train = sub.add_parser("train", help="pretrain, then importance-guided training")
    common(p_train)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--lambda", dest="lam", type=float, help="blend weight in [0, 1]")
    p_train.add_argument("--cadence", choices=("per_epoch", "per_step"))
    p_train.set_defaults(func=_cmd_train)

    p_sweep = sub.add_parser("sweep", help="one full run per lambda value")
    common(p_sweep)
    p_sweep.add_argument("--epochs", type=int)
    p_sweep.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p_sweep.add_argument("--batch-size", dest="batch_size", type=int)
    p_sweep.add_argument("--lr", type=float)
    p_sweep.add_argument("--lambdas", help="comma-separated lambda values")
    p_sweep.add_argument("--cadence", choices=("per_epoch", "per_step"))
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel lambda runs")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_explain = sub.add_parser("explain", help="write the importance matrix CSV for a checkpoint")
    common(p_explain)
    p_explain.add_argument("--checkpoint", required=True)
    p_explain.set_defaults(func=_cmd_explain)

    p_eval = sub.add_parser("evaluate", help="print test metrics for a checkpoint")
    common(p_eval, needs_out=False)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=_cmd_evaluate)

    p_gen = sub.add_parser("gen-data", help="write a synthetic dataset to disk")
    common(p_gen)
    p_gen.set_defaults(func=_cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except SicdnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
