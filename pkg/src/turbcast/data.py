"""Dataset assembly and the on-disk sample format.

A corpus is a list of hourly feature cubes plus hourly (sparse) label
cubes. Samples are cut with a stride-1 sliding window of n+p hours: the
first n hours form the history, the last p hours form both the forecast
feature cubes and the label targets. Samples are shuffled once by seed and
partitioned 6:2:2.

On disk a dataset is::

    root/
      manifest.json            format_version, region, channels, splits
      train/sample_00000/
        history.npy            [n,L,W,H,C]  float32
        forecast.npy           [p,L,W,H,C]  float32
        labels.npy             [p,L,W,H]    int8, -1 = unlabeled
        truth.npy              [p,L,W,H]    int8, optional dense labels
      val/..., test/...

``truth.npy`` carries the generator's hidden dense classes for evaluation
only; training code never reads it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ValidationError
from .grids import (
    CHANNEL_NAMES,
    CLASS_NAMES,
    CubeKind,
    CubeSample,
    FeatureCube,
    LabelCube,
    RegionSpec,
    validate_label_codes,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")
SPLIT_RATIOS = (0.6, 0.2, 0.2)
CRUISE_BAND_FT = (31000.0, 38000.0)
METERS_PER_FOOT = 0.3048


def sliding_windows(
    features: list[FeatureCube],
    labels: list[LabelCube],
    region: RegionSpec,
    nwp_features: list[FeatureCube] | None = None,
) -> list[CubeSample]:
    """Stride-1 windows of n history + p target hours over an hourly corpus.

    ``nwp_features`` supplies the forecast-feature stream; when omitted the
    true future cubes are re-tagged as forecasts (a perfect-forecast
    surrogate). Returns [] with a logged diagnostic when the corpus is
    shorter than n+p hours.
    """
    if len(features) != len(labels):
        raise ValidationError(f"{len(features)} feature hours vs {len(labels)} label hours")
    if nwp_features is None:
        nwp_features = [cube.with_kind(CubeKind.NWP_FORECAST) for cube in features]
    elif len(nwp_features) != len(features):
        raise ValidationError(f"{len(nwp_features)} forecast hours vs {len(features)} feature hours")
    n, p = region.history_len, region.horizon_len
    window = n + p
    if len(features) < window:
        logger.warning("corpus has %d hours, need at least %d for one sample", len(features), window)
        return []
    samples = []
    for start in range(len(features) - window + 1):
        samples.append(
            CubeSample(
                history=tuple(features[start : start + n]),
                forecast_features=tuple(nwp_features[start + n : start + window]),
                targets=tuple(labels[start + n : start + window]),
            )
        )
    return samples


def altitude_filter(level_heights: np.ndarray | list[float], unit: str = "m") -> list[int]:
    """Indices of levels inside the cruising band [31000, 38000] ft, inclusive.

    ``unit`` is "m" or "ft". Raises ConfigurationError when nothing survives.
    """
    heights = np.asarray(level_heights, dtype=np.float64)
    if unit == "m":
        heights_ft = heights / METERS_PER_FOOT
    elif unit == "ft":
        heights_ft = heights
    else:
        raise ConfigurationError(f"unit must be 'm' or 'ft', got {unit!r}")
    low, high = CRUISE_BAND_FT
    kept = [int(i) for i in np.flatnonzero((heights_ft >= low) & (heights_ft <= high))]
    if not kept:
        raise ConfigurationError(
            f"no level lies in the cruising band {low:.0f}-{high:.0f} ft "
            f"(got {np.sort(heights_ft).tolist()} ft)"
        )
    return kept


def split_counts(total: int) -> tuple[int, int, int]:
    """Floor each 6:2:2 share, then hand leftover samples to train, val, test
    in that order."""
    floors = [int(total * r) for r in SPLIT_RATIOS]
    remainder = total - sum(floors)
    for i in range(remainder):
        floors[i % 3] += 1
    return tuple(floors)


def split_samples(
    samples: list, seed: int, by_time: bool = False
) -> tuple[list, list, list]:
    """Partition samples 6:2:2; shuffled by seed, or contiguous when
    ``by_time`` (no leakage across overlapping windows)."""
    if len(samples) < 5:
        raise ValidationError(f"need at least 5 samples to split 6:2:2, got {len(samples)}")
    order = np.arange(len(samples))
    if not by_time:
        order = np.random.default_rng(seed).permutation(len(samples))
    n_train, n_val, _ = split_counts(len(samples))
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train : n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val :]]
    return train, val, test


def check_split_ratios(counts: dict[str, int]) -> None:
    total = sum(counts.values())
    if total == 0:
        raise ValidationError("dataset has no samples")
    for name, ratio in zip(SPLIT_NAMES, SPLIT_RATIOS):
        expected = ratio * total
        tolerance = max(1.0, 0.01 * total)
        if abs(counts.get(name, 0) - expected) > tolerance:
            raise ValidationError(
                f"split '{name}' has {counts.get(name, 0)} of {total} samples, "
                f"expected about {expected:.1f} (6:2:2)"
            )


@dataclass
class SampleRecord:
    """One sample as plain arrays, the unit of disk IO and batching."""

    history: np.ndarray  # [n,L,W,H,C] float32
    forecast: np.ndarray  # [p,L,W,H,C] float32
    labels: np.ndarray  # [p,L,W,H] int8
    truth: np.ndarray | None  # [p,L,W,H] int8, dense, evaluation only
    start_hour: int

    def validate(self, region: RegionSpec) -> None:
        n, p = region.history_len, region.horizon_len
        grid = region.grid_shape
        expectations = {
            "history": (self.history, (n, *grid, region.channels), np.float32),
            "forecast": (self.forecast, (p, *grid, region.channels), np.float32),
            "labels": (self.labels, (p, *grid), np.int8),
        }
        if self.truth is not None:
            expectations["truth"] = (self.truth, (p, *grid), np.int8)
        for name, (arr, shape, dtype) in expectations.items():
            if arr.shape != shape:
                raise ValidationError(f"{name} has shape {arr.shape}, expected {shape}")
            if arr.dtype != dtype:
                raise ValidationError(f"{name} has dtype {arr.dtype}, expected {dtype}")
        validate_label_codes(self.labels, "labels")
        if self.truth is not None:
            validate_label_codes(self.truth, "truth")
            if (self.truth < 0).any():
                raise ValidationError("truth must be dense (no -1 entries)")


def record_from_sample(sample: CubeSample, truth: np.ndarray | None = None) -> SampleRecord:
    history = np.stack([c.data for c in sample.history]).astype(np.float32)
    forecast = np.stack([c.data for c in sample.forecast_features]).astype(np.float32)
    labels = np.stack([t.labels for t in sample.targets]).astype(np.int8)
    truth_arr = None if truth is None else np.asarray(truth, dtype=np.int8)
    return SampleRecord(history, forecast, labels, truth_arr, start_hour=sample.start_hour)


def save_dataset(
    root: str | Path,
    region: RegionSpec,
    seed: int,
    splits: dict[str, list[SampleRecord]],
    extra_manifest: dict | None = None,
) -> Path:
    """Write a dataset directory; validates every record against the region."""
    unknown = set(splits) - set(SPLIT_NAMES)
    if unknown:
        raise ValidationError(f"unknown split names {sorted(unknown)}")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    counts = {}
    start_hours = {}
    for name in SPLIT_NAMES:
        records = splits.get(name, [])
        counts[name] = len(records)
        start_hours[name] = [int(r.start_hour) for r in records]
        split_dir = root / name
        split_dir.mkdir(exist_ok=True)
        for i, record in enumerate(records):
            record.validate(region)
            sample_dir = split_dir / f"sample_{i:05d}"
            sample_dir.mkdir(exist_ok=True)
            np.save(sample_dir / "history.npy", record.history, allow_pickle=False)
            np.save(sample_dir / "forecast.npy", record.forecast, allow_pickle=False)
            np.save(sample_dir / "labels.npy", record.labels, allow_pickle=False)
            if record.truth is not None:
                np.save(sample_dir / "truth.npy", record.truth, allow_pickle=False)
    check_split_ratios(counts)
    manifest = {
        "format_version": FORMAT_VERSION,
        "region": region.to_dict(),
        "channel_names": list(CHANNEL_NAMES),
        "class_names": list(CLASS_NAMES),
        "seed": int(seed),
        "splits": {name: {"count": counts[name], "start_hours": start_hours[name]} for name in SPLIT_NAMES},
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return root


@dataclass
class LoadedDataset:
    region: RegionSpec
    manifest: dict
    splits: dict[str, list[SampleRecord]]

    def split(self, name: str) -> list[SampleRecord]:
        if name not in self.splits:
            raise ValidationError(f"dataset has no split {name!r}")
        return self.splits[name]


def load_dataset(root: str | Path) -> LoadedDataset:
    """Read and validate a dataset directory written by ``save_dataset``."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise ValidationError(f"no manifest.json under {root}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported dataset format_version {manifest.get('format_version')!r}")
    if manifest.get("channel_names") != list(CHANNEL_NAMES):
        raise ValidationError("dataset channel names do not match this build's channel order")
    region = RegionSpec.from_dict(manifest["region"])
    splits: dict[str, list[SampleRecord]] = {}
    for name in SPLIT_NAMES:
        info = manifest["splits"][name]
        records = []
        for i in range(info["count"]):
            sample_dir = root / name / f"sample_{i:05d}"
            truth_path = sample_dir / "truth.npy"
            record = SampleRecord(
                history=np.load(sample_dir / "history.npy", allow_pickle=False),
                forecast=np.load(sample_dir / "forecast.npy", allow_pickle=False),
                labels=np.load(sample_dir / "labels.npy", allow_pickle=False),
                truth=np.load(truth_path, allow_pickle=False) if truth_path.is_file() else None,
                start_hour=int(info["start_hours"][i]),
            )
            record.validate(region)
            records.append(record)
        splits[name] = records
    check_split_ratios({name: len(records) for name, records in splits.items()})
    return LoadedDataset(region=region, manifest=manifest, splits=splits)


def stack_split(records: list[SampleRecord]) -> dict[str, np.ndarray]:
    """Stack a split into batched arrays: history [N,n,L,W,H,C], forecast,
    labels, and truth (only when every record carries it)."""
    if not records:
        raise ValidationError("cannot stack an empty split")
    out = {
        "history": np.stack([r.history for r in records]),
        "forecast": np.stack([r.forecast for r in records]),
        "labels": np.stack([r.labels for r in records]),
    }
    if all(r.truth is not None for r in records):
        out["truth"] = np.stack([r.truth for r in records])
    return out
