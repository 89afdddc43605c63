"""Synthetic hourly weather corpus with sparse turbulence labels.

Six raw fields evolve as AR(1) chains in time over spatially smoothed
Gaussian noise, giving temporally and spatially correlated grids with
plausible magnitudes: temperature cools with height and stays in
[200, 310] K, pressure decays exponentially with height (strictly
decreasing per column), the zonal wind carries vertical shear, and total
wind speed is capped at 80 m/s.

Each cell-hour gets a hidden class from a latent instability score built
from the generated fields' own Richardson number, vertical wind shear, and
vertical-velocity magnitude. Thresholds come either from the config or, by
default, from the (0.80, 0.92, 0.98) quantiles of the score, which pins the
class imbalance. Labels are then revealed independently per cell with
probability ``label_rate``; the dense truth is kept separately for
evaluation only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import SampleRecord, record_from_sample, save_dataset, sliding_windows, split_samples
from .errors import ConfigurationError, DegenerateInputError, ValidationError
from .grids import NUM_CLASSES, CubeKind, FeatureCube, LabelCube, RegionSpec
from .indexes import RawWeatherGrid, build_feature_cube, richardson_number, vertical_wind_shear

AR_COEFF = 0.9
LEVEL_HEIGHTS_M = (9500.0, 10000.0, 10500.0, 11000.0, 11500.0)
QUANTILES = (0.80, 0.92, 0.98)
WIND_CAP = 80.0
FIELD_ORDER = ("temperature", "pressure", "u_wind", "v_wind", "vertical_velocity", "rel_humidity")


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int = 0
    hours: int = 60
    label_rate: float = 0.02
    smoothness: float = 3.0
    class_thresholds: tuple[float, float, float] | None = None
    noise_scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.label_rate <= 1.0:
            raise ConfigurationError(f"label_rate must lie in (0,1], got {self.label_rate}")
        if self.hours < 1:
            raise ConfigurationError(f"hours must be positive, got {self.hours}")
        if self.smoothness <= 0:
            raise ConfigurationError(f"smoothness must be positive, got {self.smoothness}")
        if not 0.0 < self.noise_scale <= 5.0:
            raise ConfigurationError(f"noise_scale must lie in (0,5], got {self.noise_scale}")
        if self.class_thresholds is not None:
            t = tuple(float(x) for x in self.class_thresholds)
            if len(t) != 3 or not (t[0] < t[1] < t[2]):
                raise ConfigurationError(f"class_thresholds must be 3 strictly increasing values, got {t}")
            object.__setattr__(self, "class_thresholds", t)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "hours": self.hours,
            "label_rate": self.label_rate,
            "smoothness": self.smoothness,
            "class_thresholds": list(self.class_thresholds) if self.class_thresholds else None,
            "noise_scale": self.noise_scale,
        }


@dataclass
class SyntheticCorpus:
    """Everything the generator knows: hourly cubes, sparse labels, and the
    hidden dense truth."""

    features: list[FeatureCube]
    labels: list[LabelCube]
    truth: list[np.ndarray]
    thresholds: tuple[float, float, float]
    level_heights: np.ndarray
    raw: dict[str, np.ndarray] = field(repr=False, default_factory=dict)


def _smooth_unit_noise(rng: np.random.Generator, shape: tuple[int, int, int], sigma: float) -> np.ndarray:
    """Spatially correlated noise with approximately unit marginal variance.

    Wrap-mode Gaussian smoothing keeps the field stationary; dividing by the
    smoother's impulse-response L2 norm restores unit variance.
    """
    noise = rng.standard_normal(shape)
    sig = (sigma, sigma, 1.0)
    smoothed = gaussian_filter(noise, sigma=sig, mode="wrap")
    impulse = np.zeros(shape)
    impulse[shape[0] // 2, shape[1] // 2, shape[2] // 2] = 1.0
    norm = np.sqrt((gaussian_filter(impulse, sigma=sig, mode="wrap") ** 2).sum())
    return smoothed / norm


def _latent_chains(rng: np.random.Generator, hours: int, shape: tuple[int, int, int],
                   sigma: float) -> dict[str, np.ndarray]:
    """One stationary AR(1) chain of smoothed unit-variance fields per raw field."""
    chains = {name: np.empty((hours, *shape)) for name in FIELD_ORDER}
    innovation = np.sqrt(1.0 - AR_COEFF**2)
    for name in FIELD_ORDER:
        chains[name][0] = _smooth_unit_noise(rng, shape, sigma)
    for t in range(1, hours):
        for name in FIELD_ORDER:
            chains[name][t] = AR_COEFF * chains[name][t - 1] + innovation * _smooth_unit_noise(rng, shape, sigma)
    return chains


def _materialize_fields(chains: dict[str, np.ndarray], heights: np.ndarray,
                        noise_scale: float) -> dict[str, np.ndarray]:
    """Map unit-variance latents to physical fields."""
    z_rel = (heights - heights[0]) / (heights[-1] - heights[0])  # 0..1 over the column
    s = noise_scale
    temperature = np.clip(226.0 - 13.0 * z_rel + 6.0 * s * chains["temperature"], 200.0, 310.0)
    # tanh-bounded relative noise keeps each column strictly decreasing for
    # noise_scale <= 5 (adjacent-level base ratio exp(-500/8400) = 0.942)
    pressure = 101325.0 * np.exp(-heights / 8400.0) * (1.0 + 0.005 * s * np.tanh(chains["pressure"]))
    u_wind = 18.0 + 6.0 * z_rel + 12.0 * s * chains["u_wind"]
    v_wind = 10.0 * s * chains["v_wind"]
    speed = np.hypot(u_wind, v_wind)
    over = speed > WIND_CAP
    if over.any():
        factor = np.where(over, WIND_CAP / np.maximum(speed, 1e-9), 1.0)
        u_wind = u_wind * factor
        v_wind = v_wind * factor
    vertical_velocity = 1.5 * s * chains["vertical_velocity"]
    rel_humidity = np.clip(50.0 + 25.0 * s * chains["rel_humidity"], 0.0, 100.0)
    return {
        "temperature": temperature,
        "pressure": pressure,
        "u_wind": u_wind,
        "v_wind": v_wind,
        "vertical_velocity": vertical_velocity,
        "rel_humidity": rel_humidity,
    }


def _instability_score(grid: RawWeatherGrid) -> np.ndarray:
    """Latent severity in [0, 1): rewards small positive Richardson number,
    strong vertical shear, and strong vertical motion."""
    ri = np.clip(richardson_number(grid), 0.0, None)
    shear = vertical_wind_shear(grid)
    updraft = np.abs(grid.vertical_velocity)
    return 0.5 / (1.0 + ri) + 0.3 * np.tanh(shear / 0.02) + 0.2 * np.tanh(updraft / 1.5)


def generate_synthetic(config: SyntheticConfig, region: RegionSpec | None = None) -> SyntheticCorpus:
    """Deterministic hourly corpus for the configured region (default 10x10x5)."""
    region = region or RegionSpec()
    if config.hours < region.history_len + region.horizon_len:
        raise ConfigurationError(
            f"hours ({config.hours}) must cover one window of "
            f"{region.history_len + region.horizon_len} hours"
        )
    if region.channels != 12:
        raise ConfigurationError("the generator produces exactly 12 channels")
    heights = np.asarray(LEVEL_HEIGHTS_M[: region.height_grids], dtype=np.float64)
    if heights.shape[0] != region.height_grids:
        raise ConfigurationError(
            f"region wants {region.height_grids} levels but only {len(LEVEL_HEIGHTS_M)} are defined"
        )
    rng = np.random.default_rng(config.seed)
    shape = (region.length_grids, region.width_grids, region.height_grids)
    chains = _latent_chains(rng, config.hours, shape, config.smoothness)
    fields = _materialize_fields(chains, heights, config.noise_scale)

    grids = []
    scores = np.empty((config.hours, *shape))
    for t in range(config.hours):
        grid = RawWeatherGrid(
            u_wind=fields["u_wind"][t],
            v_wind=fields["v_wind"][t],
            temperature=fields["temperature"][t],
            rel_humidity=fields["rel_humidity"][t],
            vertical_velocity=fields["vertical_velocity"][t],
            pressure=fields["pressure"][t],
            level_heights=heights,
        )
        grids.append(grid)
        scores[t] = _instability_score(grid)

    if config.class_thresholds is None:
        thresholds = tuple(float(q) for q in np.quantile(scores, QUANTILES))
        if not thresholds[0] < thresholds[1] < thresholds[2]:
            raise DegenerateInputError(
                f"score quantiles are not strictly increasing ({thresholds}); "
                "the generated fields are too uniform to stratify"
            )
    else:
        thresholds = config.class_thresholds
    truth = np.digitize(scores, thresholds).astype(np.int8)  # 0..3 per cell-hour

    counts = np.bincount(truth.ravel(), minlength=NUM_CLASSES)
    if (counts == 0).any():
        missing = [int(i) for i in np.flatnonzero(counts == 0)]
        raise DegenerateInputError(
            f"classes {missing} never occur in the hidden truth; adjust thresholds or hours"
        )
    if counts[0] <= counts[1:].max():
        raise DegenerateInputError("the negative class must be the majority in the hidden truth")

    revealed = rng.random(truth.shape) < config.label_rate
    sparse = np.where(revealed, truth, np.int8(-1)).astype(np.int8)

    features = [build_feature_cube(grids[t], timestamp=t, kind=CubeKind.HISTORICAL) for t in range(config.hours)]
    labels = [LabelCube(labels=sparse[t], timestamp=t) for t in range(config.hours)]
    return SyntheticCorpus(
        features=features,
        labels=labels,
        truth=[truth[t] for t in range(config.hours)],
        thresholds=thresholds,
        level_heights=heights,
        raw=fields,
    )


def corpus_records(corpus: SyntheticCorpus, region: RegionSpec) -> list[SampleRecord]:
    """Window the corpus and attach each sample's dense-truth block."""
    samples = sliding_windows(corpus.features, corpus.labels, region)
    records = []
    n, p = region.history_len, region.horizon_len
    for sample in samples:
        start = sample.start_hour
        truth_block = np.stack(corpus.truth[start + n : start + n + p]).astype(np.int8)
        records.append(record_from_sample(sample, truth=truth_block))
    return records


def build_synthetic_dataset(
    config: SyntheticConfig,
    root,
    region: RegionSpec | None = None,
    split_by_time: bool = False,
):
    """Generate, window, split 6:2:2 and write a dataset directory."""
    region = region or RegionSpec()
    corpus = generate_synthetic(config, region)
    records = corpus_records(corpus, region)
    if len(records) < 5:
        raise ValidationError(
            f"only {len(records)} samples from {config.hours} hours; increase hours"
        )
    train, val, test = split_samples(records, seed=config.seed, by_time=split_by_time)
    extra = {
        "generator": config.to_dict(),
        "class_thresholds": list(corpus.thresholds),
        "level_heights_m": corpus.level_heights.tolist(),
        "split_by_time": split_by_time,
    }
    return save_dataset(root, region, config.seed, {"train": train, "val": val, "test": test}, extra)
