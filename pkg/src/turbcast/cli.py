"""Command-line entry point.

Subcommands cover the whole pipeline: ``synth`` writes a synthetic dataset,
``indexes`` derives the 12-channel feature cubes from raw field arrays,
``train`` runs any of the three training modes, ``eval`` scores a
checkpoint on a split, ``forecast`` dumps one sample's predicted
distributions, and ``sweep`` trains and evaluates across a hyperparameter
grid.

Science-bearing settings live in a JSON config file with optional
``region``, ``synthetic`` and ``train`` sections (unknown keys are
rejected); flags carry only paths and modes. The environment variable
``T2NET_SEED`` overrides every configured seed. Exit codes: 0 success,
1 internal error, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    NumericalError,
    UsageError,
    ValidationError,
)
from .grids import CubeKind, RegionSpec
from .indexes import RawWeatherGrid, build_feature_cube
from .metrics import plot_horizon_metrics, plot_training_curves
from .synthetic import SyntheticConfig, build_synthetic_dataset
from .training import Trainer, TrainConfig, load_trained
from . import data as datamod

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

SWEEP_PARAMS = {
    "beta": "mix_upper",
    "T": "sharpen_temperature",
    "lambda": "unsupervised_weight",
    "gamma": "focal_gamma",
}


def _load_section(cls, data: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def load_config_file(path: str | None) -> dict:
    """Parse the JSON config into dataclass instances with defaults."""
    raw = {}
    if path is not None:
        file = Path(path)
        if not file.is_file():
            raise UsageError(f"config file {file} does not exist")
        raw = json.loads(file.read_text())
    unknown = set(raw) - {"region", "synthetic", "train"}
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    region_data = dict(raw.get("region", {}))
    train_data = dict(raw.get("train", {}))
    synth_data = dict(raw.get("synthetic", {}))
    seed_env = os.environ.get("T2NET_SEED")
    if seed_env is not None:
        try:
            seed = int(seed_env)
        except ValueError:
            raise UsageError(f"T2NET_SEED must be an integer, got {seed_env!r}") from None
        train_data["seed"] = seed
        synth_data["seed"] = seed
    if "kernel_size" in train_data:
        train_data["kernel_size"] = tuple(train_data["kernel_size"])
    if "class_thresholds" in synth_data and synth_data["class_thresholds"] is not None:
        synth_data["class_thresholds"] = tuple(synth_data["class_thresholds"])
    return {
        "region": _load_section(RegionSpec, region_data),
        "train": _load_section(TrainConfig, train_data),
        "synthetic": _load_section(SyntheticConfig, synth_data),
    }


# ------------------------------------------------------------------ commands
def cmd_synth(args: argparse.Namespace) -> int:
    cfg = load_config_file(args.config)
    synth: SyntheticConfig = cfg["synthetic"]
    overrides = {}
    if args.hours is not None:
        overrides["hours"] = args.hours
    if args.label_rate is not None:
        overrides["label_rate"] = args.label_rate
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        synth = dataclasses.replace(synth, **overrides)
    root = build_synthetic_dataset(synth, args.out, cfg["region"], split_by_time=args.split_by_time)
    manifest = json.loads((Path(root) / "manifest.json").read_text())
    counts = {name: info["count"] for name, info in manifest["splits"].items()}
    print(f"dataset written to {root} (samples: {counts})")
    return EXIT_OK


def cmd_indexes(args: argparse.Namespace) -> int:
    source = Path(args.raw)
    if not source.is_file():
        raise UsageError(f"raw field file {source} does not exist")
    with np.load(source) as archive:
        fields = {name: archive[name] for name in archive.files}
    required = {"u_wind", "v_wind", "temperature", "rel_humidity", "vertical_velocity", "pressure",
                "level_heights"}
    missing = required - set(fields)
    if missing:
        raise UsageError(f"raw field archive is missing arrays: {sorted(missing)}")
    heights = fields.pop("level_heights")
    sample = fields["u_wind"]
    hourly = sample.ndim == 4
    hours = sample.shape[0] if hourly else 1
    cubes = []
    for t in range(hours):
        grid = RawWeatherGrid(
            **{name: (arr[t] if hourly else arr) for name, arr in fields.items()},
            level_heights=heights,
            cell_dx=args.cell_dx,
            cell_dy=args.cell_dy,
        )
        cubes.append(build_feature_cube(grid, timestamp=t, kind=CubeKind.HISTORICAL).data)
    out = np.stack(cubes) if hourly else cubes[0]
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    np.save(out_path, out, allow_pickle=False)
    print(f"feature cube {out.shape} written to {out_path}")
    return EXIT_OK


def _load_dataset_arg(path: str) -> datamod.LoadedDataset:
    root = Path(path)
    if not (root / "manifest.json").is_file():
        raise UsageError(f"{root} is not a dataset directory (no manifest.json)")
    return datamod.load_dataset(root)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config_file(args.config)
    train_cfg: TrainConfig = cfg["train"]
    if args.mode is not None:
        train_cfg = dataclasses.replace(train_cfg, mode=args.mode.replace("-", "_"))
    dataset = _load_dataset_arg(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(train_cfg, dataset.region, dataset, out_dir)
    if args.resume is not None:
        trainer.restore(args.resume)
    header = {"event": "config", **train_cfg.to_dict(), "region": dataset.region.to_dict()}
    with open(out_dir / "log.jsonl", "a") as fh:
        fh.write(json.dumps(header) + "\n")
    result = trainer.train()
    plot_training_curves(result.log, out_dir / "training_curves.png")
    print(
        f"trained mode={train_cfg.mode} for {trainer.epoch} epochs; "
        f"best epoch {result.best_epoch} ({train_cfg.early_stop_metric}={result.best_value:.4f}); "
        f"checkpoints under {out_dir}"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    dataset = _load_dataset_arg(args.data)
    trainer = load_trained(args.checkpoint, dataset)
    report = trainer.evaluate_split(args.split, config_echo={"checkpoint": str(args.checkpoint)})
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_json(out_dir / f"report_{args.split}.json")
    (out_dir / f"report_{args.split}.txt").write_text(report.to_text())
    plot_horizon_metrics(report, out_dir / f"metrics_by_horizon_{args.split}.png")
    log_path = Path(args.checkpoint).parent / "log.jsonl"
    if log_path.is_file():
        records = [
            json.loads(line)
            for line in log_path.read_text().splitlines()
            if line.strip() and "epoch" in json.loads(line)
        ]
        plot_training_curves(records, out_dir / "training_curves.png")
    print(report.to_text())
    print(f"reports written under {out_dir}")
    return EXIT_OK


def cmd_forecast(args: argparse.Namespace) -> int:
    dataset = _load_dataset_arg(args.data)
    records = dataset.split(args.split)
    if not 0 <= args.sample < len(records):
        raise UsageError(f"sample index {args.sample} outside 0..{len(records) - 1}")
    trainer = load_trained(args.checkpoint, dataset)
    record = records[args.sample]
    dist, classes = trainer.predict_sample(record.history, record.forecast)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.save(out_dir / "distributions.npy", dist, allow_pickle=False)
    np.save(out_dir / "classes.npy", classes, allow_pickle=False)
    print(f"forecast for {args.split}/sample_{args.sample:05d} written to {out_dir}")
    return EXIT_OK


def _sweep_value(config: TrainConfig, field_name: str, value: float, data_dir: str,
                 out_dir: str) -> dict:
    dataset = _load_dataset_arg(data_dir)
    cfg = dataclasses.replace(config, **{field_name: value})
    trainer = Trainer(cfg, dataset.region, dataset, out_dir)
    result = trainer.train()
    report = trainer.evaluate_split("test")
    return {
        "value": value,
        "accuracy": report.accuracy,
        "weighted_precision": report.weighted_precision,
        "weighted_recall": report.weighted_recall,
        "weighted_f1": report.weighted_f1,
        "best_epoch": result.best_epoch,
    }


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config_file(args.config)
    train_cfg: TrainConfig = cfg["train"]
    name, _, raw_values = args.param.partition("=")
    if name not in SWEEP_PARAMS:
        raise UsageError(f"sweep parameter must be one of {sorted(SWEEP_PARAMS)}, got {name!r}")
    if not raw_values:
        raise UsageError("sweep values missing; expected --param name=v1,v2,...")
    try:
        values = [float(v) for v in raw_values.split(",")]
    except ValueError:
        raise UsageError(f"could not parse sweep values {raw_values!r}") from None
    field_name = SWEEP_PARAMS[name]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    if args.parallel > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            futures = [
                pool.submit(_sweep_value, train_cfg, field_name, v, args.data,
                            str(out_dir / f"{name}_{v:g}"))
                for v in values
            ]
            rows = [f.result() for f in futures]
    else:
        for v in values:
            rows.append(_sweep_value(train_cfg, field_name, v, args.data, str(out_dir / f"{name}_{v:g}")))
    csv_path = out_dir / f"sweep_{name}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["param", "value", "accuracy", "weighted_precision",
                                                "weighted_recall", "weighted_f1", "best_epoch"])
        writer.writeheader()
        for row in rows:
            writer.writerow({"param": name, **row})
    print(f"sweep results written to {csv_path}")
    return EXIT_OK


# ------------------------------------------------------------------- parsing
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="turbcast",
                                     description="semi-supervised turbulence forecasting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--hours", type=int, default=None)
    p.add_argument("--label-rate", type=float, default=None, dest="label_rate")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--split-by-time", action="store_true", dest="split_by_time")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("indexes", help="derive 12-channel feature cubes from raw fields (.npz)")
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cell-dx", type=float, default=13000.0, dest="cell_dx")
    p.add_argument("--cell-dy", type=float, default=13000.0, dest="cell_dy")
    p.set_defaults(func=cmd_indexes)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["t2net", "supervised", "hard-pseudo"], default=None)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("forecast", help="write one sample's forecast distributions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("sweep", help="train and evaluate across one hyperparameter")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--param", required=True, help="name=v1,v2,... with name in beta|T|lambda|gamma")
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValidationError, ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
