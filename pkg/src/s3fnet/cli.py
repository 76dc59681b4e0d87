"""Command line entry points.

Subcommands:
  synth-data   generate an IDX train/test pair plus a manifest
  train        train from a JSON run config, save checkpoint + logs + metrics
  eval         score a checkpoint on an IDX dataset
  analyze      receptive fields and params/MACs from a config, no weights
  explain      per-branch contribution report for a fused checkpoint

Exit codes are a stable contract: 0 success, 1 runtime failure (diverged
training, corrupt checkpoint or IDX payload), 2 usage or config error
(bad flags, schema violations, invalid task parameters, missing files).

Every artifact this module writes is validated against the JSON schemas
shipped in s3fnet/schemas before it hits disk, and every command is
deterministic given its inputs and --seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
from importlib import resources

import jsonschema

from .analysis import (
    contribution_report,
    count_params_flops,
    model_rf_reports,
    receptive_field,
    vgg16_conv_stack,
)
from .data import SynthTaskSpec, generate_synthetic, load_idx, save_dataset_idx, split
from .errors import (
    ConfigError,
    DataError,
    IdxFormatError,
    IntegrityError,
    ShapeError,
    StateError,
    TrainingDivergedError,
)
from .models import ModelConfig, build_model, build_network_spec, load_checkpoint
from .train import TrainConfig, evaluate, train_loop

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

_USAGE_ERRORS = (
    ConfigError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    DataError,
)
_RUNTIME_ERRORS = (
    TrainingDivergedError,
    IntegrityError,
    IdxFormatError,
    ShapeError,
    StateError,
    OSError,
)


def load_schema(name: str) -> dict:
    text = resources.files("s3fnet.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


def validate_against_schema(payload: dict, schema_name: str, label: str) -> None:
    validator = jsonschema.Draft202012Validator(load_schema(schema_name))
    errors = sorted(validator.iter_errors(payload), key=lambda e: e.json_path)
    if errors:
        lines = [f"  {e.json_path}: {e.message}" for e in errors]
        raise ConfigError(f"{label} does not match schema:\n" + "\n".join(lines))


def _jsonable(obj):
    """NaN is not valid JSON; emitted reports carry null instead."""
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_artifact(path: str, payload: dict, schema_name: str) -> dict:
    payload = _jsonable(payload)
    validate_against_schema(payload, schema_name, os.path.basename(path))
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload


def write_csv(path: str, rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_run_config(path: str) -> dict:
    with open(path) as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: run config must be a JSON object")
    validate_against_schema(config, "run_config", path)
    return config


def _effective_seed(args, config: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if "seed" in config:
        return config["seed"]
    return config.get("train", {}).get("seed", 0)


def _resolve_datasets(config: dict, seed: int):
    """Returns (train, val, test) datasets for a run config."""
    data_cfg = config["data"]
    val_frac = data_cfg.get("val_fraction", 0.15)
    if "synthetic" in data_cfg:
        test_frac = data_cfg.get("test_fraction", 0.15)
        spec = SynthTaskSpec(seed=seed, **data_cfg["synthetic"])
        full = generate_synthetic(spec)
        return split(full, (1.0 - val_frac - test_frac, val_frac, test_frac), seed=seed)
    idx = data_cfg["idx"]
    train_full = load_idx(idx["train_images"], idx["train_labels"])
    test_ds = load_idx(idx["test_images"], idx["test_labels"])
    train_ds, val_ds = split(
        train_full, (1.0 - val_frac, val_frac), seed=seed, names=("train", "val")
    )
    return train_ds, val_ds, test_ds


def _analysis_shape(config: dict, seed: int) -> tuple[tuple[int, int, int], int]:
    """Input shape and class count without building any weights."""
    data_cfg = config["data"]
    if "synthetic" in data_cfg:
        spec = SynthTaskSpec(seed=seed, **data_cfg["synthetic"])
        return (spec.size, spec.size, 1), spec.n_classes
    idx = data_cfg["idx"]
    ds = load_idx(idx["train_images"], idx["train_labels"])
    return tuple(ds.images.shape[1:]), ds.n_classes


def _load_eval_dataset(data_arg: str):
    """--data accepts a directory holding test-*.idx or an explicit
    '<prefix>' resolving to <prefix>-images.idx / <prefix>-labels.idx."""
    prefix = data_arg
    if os.path.isdir(data_arg):
        prefix = os.path.join(data_arg, "test")
    images = f"{prefix}-images.idx"
    labels = f"{prefix}-labels.idx"
    for path in (images, labels):
        if not os.path.exists(path):
            raise FileNotFoundError(f"{path}: no such file (from --data {data_arg!r})")
    return load_idx(images, labels)


def cmd_synth_data(args) -> int:
    kwargs = {
        "task": args.task,
        "size": args.size,
        "per_class": args.per_class,
        "noise": args.noise,
        "seed": args.seed,
    }
    if args.classes is not None:
        kwargs["n_classes"] = args.classes
    train_spec = SynthTaskSpec(**kwargs)
    test_per_class = args.test_per_class or max(1, args.per_class // 4)
    test_spec = dataclasses.replace(
        train_spec, per_class=test_per_class, seed=args.seed + 1
    )

    os.makedirs(args.out, exist_ok=True)
    files = {}
    for tag, spec in (("train", train_spec), ("test", test_spec)):
        dataset = generate_synthetic(spec)
        prefix = os.path.join(args.out, tag)
        for path in save_dataset_idx(prefix, dataset):
            rel = os.path.basename(path)
            part = "images" if rel.endswith("-images.idx") else "labels"
            files[f"{tag}_{part}"] = {
                "path": rel,
                "sha256": sha256_file(path),
                "count": len(dataset.labels),
            }
    manifest = {
        "format": "s3fnet-dataset",
        "version": 1,
        "task": train_spec.to_dict(),
        "test_seed": test_spec.seed,
        "test_per_class": test_per_class,
        "files": files,
    }
    write_artifact(os.path.join(args.out, "manifest.json"), manifest, "manifest")
    total = train_spec.n_classes * (train_spec.per_class + test_per_class)
    print(
        f"wrote {total} {args.task} samples "
        f"({train_spec.n_classes} classes, size {train_spec.size}) to {args.out}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_run_config(args.config)
    seed = _effective_seed(args, config)
    out_dir = args.out or config.get("out_dir")
    if not out_dir:
        raise ConfigError("no output directory: set out_dir in the config or pass --out")
    os.makedirs(out_dir, exist_ok=True)

    train_ds, val_ds, test_ds = _resolve_datasets(config, seed)
    n_classes = int(
        max(train_ds.labels.max(), val_ds.labels.max(), test_ds.labels.max())
    ) + 1
    input_shape = tuple(train_ds.images.shape[1:])
    model_cfg = ModelConfig().merged(config.get("model"))
    model = build_model(
        config["family"], input_shape, n_classes, model_cfg,
        fusion_normalize=config.get("fusion_normalize", True),
    ).initialize(seed)

    overrides = dict(config.get("train") or {})
    overrides["seed"] = seed
    train_cfg = TrainConfig().merged(overrides)

    checkpoint_path = os.path.join(out_dir, "checkpoint.ckpt")
    log_path = os.path.join(out_dir, "epochs.jsonl")
    result = train_loop(
        model, train_ds, val_ds, train_cfg,
        checkpoint_path=checkpoint_path, log_path=log_path,
    )
    best = load_checkpoint(checkpoint_path) if os.path.exists(checkpoint_path) else model
    report = evaluate(best, test_ds.images, test_ds.labels)
    write_artifact(os.path.join(out_dir, "test_metrics.json"), report.to_dict(), "metrics")
    print(
        f"{config['family']}: best epoch {result.best_epoch} "
        f"(val {train_cfg.selection_metric} {result.best_metric:.4f}), "
        f"test accuracy {report.accuracy:.4f}; artifacts in {out_dir}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = _load_eval_dataset(args.data)
    report = evaluate(model, dataset.images, dataset.labels, batch_size=args.batch_size)
    payload = _jsonable(report.to_dict())
    validate_against_schema(payload, "metrics", "metrics report")
    if args.out:
        write_artifact(args.out, payload, "metrics")
        print(f"evaluated {report.n_samples} samples: accuracy {report.accuracy:.4f}; wrote {args.out}")
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def _print_rf_table(name: str, report) -> None:
    print(f"receptive field [{name}] (input {report.input_shape[0]}x{report.input_shape[1]}):")
    for entry in report.entries:
        rf = f"{entry.rf[0]}x{entry.rf[1]}"
        print(f"  {entry.name:<18s} {entry.kind:<10s} rf {rf}")
    final = report.final_rf
    print(f"  final receptive field: {final[0]}x{final[1]}")


def cmd_analyze(args) -> int:
    if args.preset:
        if args.preset != "vgg16":
            raise ConfigError(f"unknown preset {args.preset!r} (available: vgg16)")
        report = receptive_field(vgg16_conv_stack(), (224, 224))
        _print_rf_table("vgg16", report)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            write_artifact(
                os.path.join(args.out, "rf_report.json"),
                {"towers": {"vgg16": report.to_dict()}},
                "rf_report",
            )
        return EXIT_OK

    if not args.config:
        raise ConfigError("analyze needs --config or --preset vgg16")
    config = load_run_config(args.config)
    seed = _effective_seed(args, config)
    input_shape, n_classes = _analysis_shape(config, seed)
    model_cfg = ModelConfig().merged(config.get("model"))
    spec = build_network_spec(
        config["family"], input_shape, n_classes, model_cfg,
        fusion_normalize=config.get("fusion_normalize", True),
    )
    reports = model_rf_reports(spec)
    table = count_params_flops(spec)

    for name, report in reports.items():
        _print_rf_table(name, report)
    print(
        f"params {table.total_params} ({table.total_trainable} trainable), "
        f"{table.total_macs} MACs/sample"
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_artifact(
            os.path.join(args.out, "rf_report.json"),
            {"towers": {k: v.to_dict() for k, v in reports.items()}},
            "rf_report",
        )
        write_artifact(os.path.join(args.out, "cost_table.json"), table.to_dict(), "cost_table")
        write_csv(os.path.join(args.out, "cost_table.csv"), table.csv_rows())
    return EXIT_OK


def cmd_explain(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = _load_eval_dataset(args.data)
    report = contribution_report(
        model, dataset.images, dataset.labels, batch_size=args.batch_size
    )
    payload = _jsonable(report.to_dict())
    validate_against_schema(payload, "contribution", "contribution report")
    overall = report.overall
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_artifact(os.path.join(args.out, "contribution.json"), payload, "contribution")
        write_csv(os.path.join(args.out, "contribution.csv"), report.csv_rows())
        print(
            f"mean shares: spatial {overall['mean_share_spatial']:.4f}, "
            f"spectral {overall['mean_share_spectral']:.4f}; wrote {args.out}"
        )
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="s3fnet",
        description="Dual-branch spatial/spectral image classifiers on numpy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic IDX dataset")
    p.add_argument("--task", required=True, help="shape | texture | conjunction")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--classes", type=int, default=None,
                   help="class count (defaults to the task's natural count)")
    p.add_argument("--per-class", type=int, default=100, help="training samples per class")
    p.add_argument("--test-per-class", type=int, default=None,
                   help="test samples per class (default: per-class // 4)")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", default=None, help="overrides the config out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on an IDX dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True,
                   help="dataset directory (uses test-*.idx) or an IDX path prefix")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=None, help="accepted for interface symmetry")
    p.add_argument("--out", default=None, help="write the metrics JSON here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="receptive fields and params/MACs, no weights needed")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", default=None, help="named reference stack: vgg16")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="directory for rf_report.json / cost_table.*")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("explain", help="branch contribution report for a fused checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=None, help="accepted for interface symmetry")
    p.add_argument("--out", default=None, help="directory for contribution.json / .csv")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def console_main() -> None:
    sys.exit(main())
