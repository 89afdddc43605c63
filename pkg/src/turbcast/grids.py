"""Gridded cube data model: region geometry, class coding, masks, one-hot encoding.

The atmosphere over the region of interest is discretised into an L x W x H
box of grid cells. Every hourly snapshot is either a feature cube (one
feature vector per cell) or a label cube (one turbulence class per cell,
with ``UNKNOWN`` marking cells no pilot report ever covered). All types in
this module are immutable value objects; the backing numpy arrays are
frozen at construction so instances can be shared freely across threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError, ValidationError

#: Turbulence severity classes, in label-code order 0..3.
CLASS_NAMES = ("negative", "light", "moderate", "severe")
NUM_CLASSES = 4

#: Sentinel label code for cells without a pilot report.
UNKNOWN = -1

#: Feature-cube channel order. Channels 0-5 are raw weather fields,
#: channels 6-11 the derived turbulence indexes. This order is part of the
#: on-disk dataset contract and must never be permuted.
CHANNEL_NAMES = (
    "u_wind",
    "v_wind",
    "temperature",
    "rel_humidity",
    "vertical_velocity",
    "pressure",
    "richardson_number",
    "colson_panofsky",
    "ellrod_ti1",
    "wind_speed",
    "horiz_temp_gradient",
    "mos_cat_predictor",
)


class CubeKind(str, enum.Enum):
    """Provenance of a feature cube: observed history or an NWP forecast."""

    HISTORICAL = "historical"
    NWP_FORECAST = "nwp_forecast"


@dataclass(frozen=True)
class RegionSpec:
    """Geometry of the forecast region and the sequence lengths of one sample.

    Defaults follow the 10 x 10 x 5 region of 13-km cells with 12 feature
    channels; ``history_len`` (n) input hours are used to forecast
    ``horizon_len`` (p) output hours.
    """

    length_grids: int = 10
    width_grids: int = 10
    height_grids: int = 5
    channels: int = 12
    history_len: int = 6
    horizon_len: int = 6

    def __post_init__(self) -> None:
        for name in (
            "length_grids",
            "width_grids",
            "height_grids",
            "channels",
            "history_len",
            "horizon_len",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValidationError(f"RegionSpec.{name} must be a positive integer, got {value!r}")

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return (self.length_grids, self.width_grids, self.height_grids)

    @property
    def cube_shape(self) -> tuple[int, int, int, int]:
        return (self.length_grids, self.width_grids, self.height_grids, self.channels)

    def to_dict(self) -> dict:
        return {
            "length_grids": self.length_grids,
            "width_grids": self.width_grids,
            "height_grids": self.height_grids,
            "channels": self.channels,
            "history_len": self.history_len,
            "horizon_len": self.horizon_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegionSpec":
        return cls(**d)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FeatureCube:
    """One hour's L x W x H x C feature tensor.

    ``data`` must be finite everywhere; ``timestamp`` is an integer hour
    index; ``kind`` records whether the cube was observed or NWP-forecast.
    """

    data: np.ndarray
    timestamp: int
    kind: CubeKind

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 4:
            raise ShapeError(f"feature cube must be rank-4 [L,W,H,C], got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            bad = np.argwhere(~np.isfinite(data))[0]
            raise ValidationError(
                f"feature cube has non-finite entry at cell {tuple(int(i) for i in bad)}"
            )
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "kind", CubeKind(self.kind))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def with_kind(self, kind: CubeKind) -> "FeatureCube":
        """Return a view of this cube re-tagged with a different kind (shares data)."""
        new = object.__new__(FeatureCube)
        object.__setattr__(new, "data", self.data)
        object.__setattr__(new, "timestamp", self.timestamp)
        object.__setattr__(new, "kind", CubeKind(kind))
        return new


@dataclass(frozen=True)
class LabelCube:
    """One hour's L x W x H integer class grid; ``UNKNOWN`` (-1) marks unlabeled cells."""

    labels: np.ndarray
    timestamp: int

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ShapeError(f"label cube must be rank-3 [L,W,H], got shape {labels.shape}")
        validate_label_codes(labels)
        object.__setattr__(self, "labels", _freeze(labels.astype(np.int8)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.labels.shape


def validate_label_codes(labels: np.ndarray, name: str = "labels") -> None:
    """Raise ValidationError naming the first cell whose code is outside {-1,0,1,2,3}."""
    bad = (labels < UNKNOWN) | (labels >= NUM_CLASSES)
    if np.any(bad):
        cell = np.argwhere(bad)[0]
        raise ValidationError(
            f"invalid turbulence class {int(labels[tuple(cell)])} in {name} "
            f"at cell {tuple(int(i) for i in cell)}"
        )


@dataclass(frozen=True)
class ClassDistribution:
    """A probability vector over the four turbulence classes."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.shape != (NUM_CLASSES,):
            raise ShapeError(f"class distribution must have shape (4,), got {probs.shape}")
        if np.any(probs < 0):
            raise ValidationError(f"class distribution has negative entry: {probs}")
        if abs(float(probs.sum()) - 1.0) > 1e-6:
            raise ValidationError(f"class distribution sums to {float(probs.sum())!r}, expected 1 within 1e-6")
        object.__setattr__(self, "probs", _freeze(probs))

    def argmax(self) -> int:
        return int(np.argmax(self.probs))


@dataclass(frozen=True)
class CubeSample:
    """One training example: n history cubes, p forecast cubes, p label cubes.

    Timestamps must run consecutively, with forecast features synchronized to
    the target labels hour by hour.
    """

    history: tuple[FeatureCube, ...]
    forecast_features: tuple[FeatureCube, ...]
    targets: tuple[LabelCube, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", tuple(self.history))
        object.__setattr__(self, "forecast_features", tuple(self.forecast_features))
        object.__setattr__(self, "targets", tuple(self.targets))
        if len(self.forecast_features) != len(self.targets):
            raise ShapeError(
                f"{len(self.forecast_features)} forecast cubes vs {len(self.targets)} label cubes"
            )
        if not self.history or not self.targets:
            raise ShapeError("sample needs at least one history cube and one target cube")
        for cube in self.history:
            if cube.kind is not CubeKind.HISTORICAL:
                raise ValidationError(f"history cube at hour {cube.timestamp} has kind {cube.kind.value}")
        for cube in self.forecast_features:
            if cube.kind is not CubeKind.NWP_FORECAST:
                raise ValidationError(f"forecast cube at hour {cube.timestamp} has kind {cube.kind.value}")
        ts = [c.timestamp for c in self.history] + [c.timestamp for c in self.forecast_features]
        if ts != list(range(ts[0], ts[0] + len(ts))):
            raise ValidationError(f"sample timestamps are not consecutive hours: {ts}")
        for cube, label in zip(self.forecast_features, self.targets):
            if cube.timestamp != label.timestamp:
                raise ValidationError(
                    f"forecast cube hour {cube.timestamp} != label cube hour {label.timestamp}"
                )

    @property
    def start_hour(self) -> int:
        return self.history[0].timestamp


def make_masks(labels: LabelCube | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a label grid into complementary supervised/unsupervised boolean masks.

    The supervised mask is true exactly where a class is known; the two masks
    partition the grid.
    """
    arr = labels.labels if isinstance(labels, LabelCube) else np.asarray(labels)
    validate_label_codes(arr)
    supervised = arr != UNKNOWN
    return supervised, ~supervised


def one_hot(labels: LabelCube | np.ndarray) -> np.ndarray:
    """Encode a label grid as [L,W,H,4] one-hot rows; unknown cells become all-zero rows.

    All-zero rows are deliberate: every consumer masks by the supervised or
    unsupervised mask first, so an accidentally unmasked unknown cell
    contributes exactly zero and is therefore detectable.
    """
    arr = labels.labels if isinstance(labels, LabelCube) else np.asarray(labels)
    validate_label_codes(arr)
    out = np.zeros(arr.shape + (NUM_CLASSES,), dtype=np.float32)
    known = arr != UNKNOWN
    idx = np.nonzero(known)
    out[idx + (arr[known].astype(np.int64),)] = 1.0
    return out


def stack_feature_cubes(cubes: Sequence[FeatureCube]) -> np.ndarray:
    """Stack cubes along a new leading time axis -> [T,L,W,H,C] float32."""
    return np.stack([c.data for c in cubes], axis=0)


def stack_label_cubes(cubes: Iterable[LabelCube]) -> np.ndarray:
    """Stack label cubes along a new leading time axis -> [T,L,W,H] int8."""
    return np.stack([c.labels for c in cubes], axis=0)
