"""Command-line entry point: synth | preprocess | train | eval | embed."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import preprocess as pp
from . import training as tr
from .preprocess import DataError

SEED_ENV = "PLASTIC_NMN_SEED"


class ConfigError(ValueError):
    """Invalid run configuration (unknown keys, bad values, bad JSON)."""


SYNTH_DEFAULTS = {
    "preset": "default",
    "total_windows": 10_000,
    "duration_seconds": 10.0,
    "noise_level": None,   # preset default when null
    "counts": None,        # prevalence-proportional when null
}

CONFIG_DEFAULTS = {
    "seed": 0,
    "model": "plastic-nmn",
    "lr": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "batch": 32,
    "epochs": None,
    "folds": 5,
    "k": 80,
    "l": 25,
    "eta": 0.5,
    "synth": SYNTH_DEFAULTS,
}


def _merge_strict(defaults, given, path="config"):
    merged = dict(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown {path} key {key!r}")
        if isinstance(defaults[key], dict) and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"{path}.{key} must be an object")
            merged[key] = _merge_strict(defaults[key], value, f"{path}.{key}")
        else:
            merged[key] = value
    return merged


def load_run_config(path, seed_flag=None):
    """Resolved config dict: file < PLASTIC_NMN_SEED < --seed."""
    given = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                given = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(given, dict):
            raise ConfigError("config must be a JSON object")
    merged = _merge_strict(CONFIG_DEFAULTS, given)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            merged["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from None
    if seed_flag is not None:
        merged["seed"] = seed_flag
    return merged


def train_config_from(merged, **overrides):
    fields = {k: v for k, v in merged.items() if k != "synth"}
    fields.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return tr.TrainConfig(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _write_resolved(out_dir, merged, command, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    payload = {"command": command, "config": merged}
    payload.update(extra or {})
    with open(os.path.join(out_dir, "resolved_config.json"), "w",
              encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def _synth_specs(synth):
    preset = synth["preset"]
    if preset == "default":
        specs = (pp.default_class_specs() if synth["noise_level"] is None
                 else pp.default_class_specs(synth["noise_level"]))
    elif preset == "hard":
        specs = (pp.hard_class_specs() if synth["noise_level"] is None
                 else pp.hard_class_specs(synth["noise_level"]))
    else:
        raise ConfigError(f"unknown synth preset {preset!r}")
    return specs


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    merged = load_run_config(args.config, args.seed)
    synth = dict(merged["synth"])
    if args.preset is not None:
        synth["preset"] = args.preset
    if args.total_windows is not None:
        synth["total_windows"] = args.total_windows
    if args.noise_level is not None:
        synth["noise_level"] = args.noise_level
    merged["synth"] = synth
    specs = _synth_specs(synth)
    counts = synth["counts"]
    if counts is None:
        counts = pp.prevalence_counts(synth["total_windows"],
                                      synth["duration_seconds"])
    elif len(counts) != len(specs):
        raise ConfigError(f"synth.counts needs {len(specs)} entries")
    recordings = pp.synth_generate(specs, counts, merged["seed"],
                                   synth["duration_seconds"])
    pp.write_recording_dataset(args.out, recordings)
    _write_resolved(args.out, merged, "synth", {"counts": list(counts)})
    print(f"wrote {len(recordings)} recordings to {args.out}")
    return 0


def cmd_preprocess(args):
    recordings = pp.load_recording_dataset(args.infile)
    groups = []
    for idx, rec in enumerate(recordings):
        groups.append(({"id": f"rec{idx:05d}"}, pp.preprocess(rec)))
    pp.write_sample_dataset(args.out, groups)
    total = sum(len(g) for _, g in groups)
    _write_resolved(args.out, {"source": args.infile}, "preprocess",
                    {"n_recordings": len(groups), "n_windows": total})
    print(f"wrote {total} windows from {len(groups)} recordings to {args.out}")
    return 0


def _train_one_fold(config, samples, fold_ids, fold, out_dir, resume):
    train = [s for s, f in zip(samples, fold_ids) if f != fold]
    fold_dir = os.path.join(out_dir, f"fold{fold}")
    target_epochs = config.resolved_epochs()

    model = adam = scaler = None
    start_epoch = 0
    curve = []
    if resume and os.path.exists(os.path.join(fold_dir, "checkpoint.json")):
        saved_config, model, scaler, adam, meta = ckpt.restore_training_state(fold_dir)
        saved = {k: v for k, v in saved_config.to_dict().items() if k != "epochs"}
        wanted = {k: v for k, v in config.to_dict().items() if k != "epochs"}
        if saved != wanted:
            raise DataError(f"checkpoint in {fold_dir} was trained with a "
                            "different configuration")
        start_epoch = int(meta["epoch"])
        curve = list(meta.get("loss_curve", []))

    for epoch in range(start_epoch, target_epochs):
        result = tr.train_fold(config, train, fold=fold, model=model,
                               adam=adam, scaler=scaler, start_epoch=epoch,
                               epochs=epoch + 1, loss_curve=curve)
        model, adam, scaler, curve = (result.model, result.adam,
                                      result.scaler, result.loss_curve)
        meta, arrays = ckpt.pack_training_state(config, fold, result)
        meta["epoch"] = epoch + 1
        ckpt.save_checkpoint(fold_dir, meta, arrays)
    with open(os.path.join(fold_dir, "loss_curve.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(curve):
            writer.writerow([i, f"{v:.10f}"])
    return fold_dir


def cmd_train(args):
    merged = load_run_config(args.config, args.seed)
    config = train_config_from(merged, model=args.model, epochs=args.epochs)
    samples = pp.load_sample_dataset(args.data)
    fold_ids = tr.stratified_folds([s.label for s in samples],
                                   config.folds, config.seed)
    folds = range(config.folds) if args.fold == "all" else [int(args.fold)]
    for fold in folds:
        if not 0 <= fold < config.folds:
            raise ConfigError(f"fold must be 0..{config.folds - 1} or 'all'")
        fold_dir = _train_one_fold(config, samples, fold_ids, fold,
                                   args.out, args.resume)
        print(f"fold {fold}: checkpoint in {fold_dir}")
    merged_echo = dict(merged)
    merged_echo.update(config.to_dict())
    _write_resolved(args.out, merged_echo, "train", {"data": args.data})
    return 0


def _test_fold_samples(meta, data_dir):
    config = tr.TrainConfig(**meta["config"])
    samples = pp.load_sample_dataset(data_dir)
    fold_ids = tr.stratified_folds([s.label for s in samples],
                                   config.folds, config.seed)
    fold = int(meta["fold"])
    return config, [s for s, f in zip(samples, fold_ids) if f == fold]


def cmd_eval(args):
    config, model, scaler, _, meta = ckpt.restore_training_state(args.checkpoint)
    config, test = _test_fold_samples(meta, args.data)
    outcome = tr.evaluate(model, scaler, test)
    report = tr.build_report(config, [outcome])
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
    with open(os.path.join(args.out, "confusion.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["actual\\predicted"] + list(pp.CLASS_NAMES[:config.n_classes]))
        for name, row in zip(pp.CLASS_NAMES, report.confusion):
            writer.writerow([name] + [f"{v:.6f}" for v in row])
    with open(os.path.join(args.out, "per_class.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "precision", "recall", "f1", "support"])
        for name, s in zip(pp.CLASS_NAMES, report.per_class):
            writer.writerow([name, f"{s['precision']:.6f}", f"{s['recall']:.6f}",
                             f"{s['f1']:.6f}", s["support"]])
    _write_resolved(args.out, meta["config"], "eval",
                    {"checkpoint": args.checkpoint, "data": args.data})
    print(f"weighted F1 {report.mean_weighted_f1:.4f}; report in {args.out}")
    return 0


def cmd_embed(args):
    config, model, scaler, _, meta = ckpt.restore_training_state(args.checkpoint)
    config, test = _test_fold_samples(meta, args.data)
    seed = config.seed if args.seed is None else args.seed
    rows, fractions = tr.embedding_table(model, scaler, test, n=args.n, seed=seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "embeddings.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "pc1", "pc2"])
        for row in rows:
            writer.writerow([row["id"], row["label"],
                             f"{row['pc1']:.8f}", f"{row['pc2']:.8f}"])
    with open(os.path.join(args.out, "embed_meta.json"), "w", encoding="utf-8") as fh:
        json.dump({"n": len(rows), "seed": seed,
                   "explained_variance": [float(v) for v in fractions]}, fh,
                  indent=1)
    _write_resolved(args.out, meta["config"], "embed",
                    {"checkpoint": args.checkpoint, "data": args.data})
    print(f"wrote {len(rows)} embedding rows to {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="plastic-nmn",
        description="Plastic neural memory network pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic raw dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--preset", choices=["default", "hard"], default=None)
    p.add_argument("--total-windows", type=int, default=None)
    p.add_argument("--noise-level", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="extract windowed spectral features")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one fold or all folds")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None,
                   choices=["plastic-nmn", "nmn-fixed", "lstm-baseline"])
    p.add_argument("--fold", default="all")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its test fold")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", help="export 2-D embedding coordinates")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except tr.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
