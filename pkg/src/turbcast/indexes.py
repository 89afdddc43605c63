"""Derived clear-air-turbulence indexes computed from raw weather grids.

Six diagnostics are derived from the six raw fields (u/v wind, temperature,
relative humidity, vertical velocity, pressure) on an L x W x H grid:

======================  =========  =============================================
index                   unit       definition
======================  =========  =============================================
Richardson number       --         (g/theta) d(theta)/dz / |dV/dz|^2
Colson-Panofsky         kt^2       (dz * shear)^2 * (1 - Ri/Ri_crit)
Ellrod TI1              1/s^2      shear * deformation
wind speed              m/s        sqrt(u^2 + v^2)
horiz. temp. gradient   K/m        |grad_H T|
MOS CAT predictor       m/s^2      wind speed * deformation
======================  =========  =============================================

Axis convention: axis 0 is x (length, spacing ``cell_dx``), axis 1 is y
(width, spacing ``cell_dy``), axis 2 is the vertical on ``level_heights``.
Derivatives use centered differences in the interior and one-sided
differences at boundaries; no ghost cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, NumericalError, ValidationError
from .grids import CHANNEL_NAMES, CubeKind, FeatureCube

GRAVITY = 9.80665  # m/s^2
P_REFERENCE = 100000.0  # Pa, reference pressure for potential temperature
KAPPA = 0.286  # R/c_p exponent in potential temperature
MS_TO_KT = 1.9438  # knots per m/s
RI_MAX = 1.0e6  # cap for the Richardson number at vanishing shear
RI_CRIT_DEFAULT = 0.5  # critical Richardson number in the Colson-Panofsky index


@dataclass(frozen=True)
class RawWeatherGrid:
    """The six raw weather fields on one hour's grid, plus cell geometry.

    Each field is a rank-3 array [L,W,H]; temperature is in K, pressure in
    Pa, winds in m/s, vertical velocity in Pa/s, relative humidity in %.
    """

    u_wind: np.ndarray
    v_wind: np.ndarray
    temperature: np.ndarray
    rel_humidity: np.ndarray
    vertical_velocity: np.ndarray
    pressure: np.ndarray
    level_heights: np.ndarray
    cell_dx: float = 13000.0
    cell_dy: float = 13000.0

    def __post_init__(self) -> None:
        fields = {}
        for name in ("u_wind", "v_wind", "temperature", "rel_humidity", "vertical_velocity", "pressure"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 3:
                raise ValidationError(f"{name} must be rank-3 [L,W,H], got shape {arr.shape}")
            fields[name] = arr
        shapes = {a.shape for a in fields.values()}
        if len(shapes) != 1:
            raise ValidationError(f"raw fields disagree on grid shape: {sorted(shapes)}")
        if np.any(fields["temperature"] <= 0):
            raise ValidationError("temperature must be positive everywhere (Kelvin)")
        if np.any(fields["pressure"] <= 0):
            raise ValidationError("pressure must be positive everywhere (Pa)")
        heights = np.asarray(self.level_heights, dtype=np.float64)
        if heights.ndim != 1 or heights.shape[0] != fields["u_wind"].shape[2]:
            raise ValidationError(
                f"level_heights must have length H={fields['u_wind'].shape[2]}, got shape {heights.shape}"
            )
        if np.any(np.diff(heights) <= 0):
            raise ValidationError("level_heights must be strictly increasing")
        if self.cell_dx <= 0 or self.cell_dy <= 0:
            raise ValidationError("cell_dx and cell_dy must be positive meters")
        for name, arr in fields.items():
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        heights.flags.writeable = False
        object.__setattr__(self, "level_heights", heights)

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.u_wind.shape


def _require_levels(grid: RawWeatherGrid, minimum: int = 2) -> None:
    if grid.grid_shape[2] < minimum:
        raise GeometryError(f"need at least {minimum} vertical levels, got {grid.grid_shape[2]}")


def _require_horizontal(grid: RawWeatherGrid, minimum: int = 2) -> None:
    length, width, _ = grid.grid_shape
    if length < minimum or width < minimum:
        raise GeometryError(f"need at least {minimum}x{minimum} horizontal cells, got {length}x{width}")


def vertical_derivative(field: np.ndarray, heights: np.ndarray) -> np.ndarray:
    """d(field)/dz on possibly non-uniform levels; centered interior, one-sided edges."""
    out = np.empty_like(field, dtype=np.float64)
    out[:, :, 1:-1] = (field[:, :, 2:] - field[:, :, :-2]) / (heights[2:] - heights[:-2])
    out[:, :, 0] = (field[:, :, 1] - field[:, :, 0]) / (heights[1] - heights[0])
    out[:, :, -1] = (field[:, :, -1] - field[:, :, -2]) / (heights[-1] - heights[-2])
    return out


def local_level_spacing(heights: np.ndarray) -> np.ndarray:
    """Effective stencil spacing per level: half the centered span, one-sided at edges."""
    dz = np.empty_like(heights, dtype=np.float64)
    dz[1:-1] = (heights[2:] - heights[:-2]) / 2.0
    dz[0] = heights[1] - heights[0]
    dz[-1] = heights[-1] - heights[-2]
    return dz


def _horizontal_derivative(field: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    out = np.empty_like(field, dtype=np.float64)
    fwd = np.take(field, range(2, field.shape[axis]), axis=axis)
    bwd = np.take(field, range(0, field.shape[axis] - 2), axis=axis)
    interior = [slice(None)] * field.ndim
    interior[axis] = slice(1, -1)
    out[tuple(interior)] = (fwd - bwd) / (2.0 * spacing)
    first = [slice(None)] * field.ndim
    first[axis] = 0
    second = [slice(None)] * field.ndim
    second[axis] = 1
    out[tuple(first)] = (field[tuple(second)] - field[tuple(first)]) / spacing
    last = [slice(None)] * field.ndim
    last[axis] = field.shape[axis] - 1
    penult = [slice(None)] * field.ndim
    penult[axis] = field.shape[axis] - 2
    out[tuple(last)] = (field[tuple(last)] - field[tuple(penult)]) / spacing
    return out


def wind_speed(grid: RawWeatherGrid) -> np.ndarray:
    """Horizontal wind magnitude |v| = sqrt(u^2 + v^2) in m/s."""
    return np.hypot(grid.u_wind, grid.v_wind)


def potential_temperature(grid: RawWeatherGrid) -> np.ndarray:
    """theta = T * (P0/P)^kappa with P0 = 1000 hPa."""
    return grid.temperature * (P_REFERENCE / grid.pressure) ** KAPPA


def vertical_wind_shear(grid: RawWeatherGrid) -> np.ndarray:
    """|dV/dz| = sqrt((du/dz)^2 + (dv/dz)^2) in 1/s."""
    _require_levels(grid)
    du = vertical_derivative(grid.u_wind, grid.level_heights)
    dv = vertical_derivative(grid.v_wind, grid.level_heights)
    return np.hypot(du, dv)


def richardson_number(grid: RawWeatherGrid, ri_max: float = RI_MAX) -> np.ndarray:
    """Gradient Richardson number, capped at +-ri_max where shear vanishes.

    Ri = (g/theta) d(theta)/dz / ((du/dz)^2 + (dv/dz)^2). Zero-shear cells
    return ri_max with the sign of the buoyancy numerator so downstream
    tensors stay finite.
    """
    _require_levels(grid)
    theta = potential_temperature(grid)
    dtheta = vertical_derivative(theta, grid.level_heights)
    numerator = (GRAVITY / theta) * dtheta
    du = vertical_derivative(grid.u_wind, grid.level_heights)
    dv = vertical_derivative(grid.v_wind, grid.level_heights)
    shear_sq = du * du + dv * dv
    with np.errstate(divide="ignore", invalid="ignore"):
        ri = np.where(shear_sq > 0.0, numerator / np.where(shear_sq > 0.0, shear_sq, 1.0),
                      np.sign(numerator) * ri_max)
    return np.clip(ri, -ri_max, ri_max)


def colson_panofsky(grid: RawWeatherGrid, ri_crit: float = RI_CRIT_DEFAULT) -> np.ndarray:
    """Colson-Panofsky index (dz * shear)^2 * (1 - Ri/Ri_crit) in kt^2.

    dz is the local vertical stencil spacing in meters; the (m/s)^2 energy
    term is converted to kt^2.
    """
    vws = vertical_wind_shear(grid)
    ri = richardson_number(grid)
    dz = local_level_spacing(grid.level_heights)
    energy = (dz[np.newaxis, np.newaxis, :] * vws) ** 2
    return energy * (1.0 - ri / ri_crit) * MS_TO_KT**2


def _deformation(grid: RawWeatherGrid) -> np.ndarray:
    """Total horizontal deformation DEF = sqrt(DSH^2 + DST^2) in 1/s."""
    dudx = _horizontal_derivative(grid.u_wind, 0, grid.cell_dx)
    dudy = _horizontal_derivative(grid.u_wind, 1, grid.cell_dy)
    dvdx = _horizontal_derivative(grid.v_wind, 0, grid.cell_dx)
    dvdy = _horizontal_derivative(grid.v_wind, 1, grid.cell_dy)
    shearing = dvdx + dudy
    stretching = dudx - dvdy
    return np.hypot(shearing, stretching)


def ellrod_ti1(grid: RawWeatherGrid) -> np.ndarray:
    """Ellrod TI1 = vertical wind shear * horizontal deformation, in 1/s^2."""
    _require_horizontal(grid)
    _require_levels(grid)
    return vertical_wind_shear(grid) * _deformation(grid)


def horiz_temp_gradient(grid: RawWeatherGrid) -> np.ndarray:
    """|grad_H T| = sqrt((dT/dx)^2 + (dT/dy)^2) in K/m."""
    _require_horizontal(grid)
    dtdx = _horizontal_derivative(grid.temperature, 0, grid.cell_dx)
    dtdy = _horizontal_derivative(grid.temperature, 1, grid.cell_dy)
    return np.hypot(dtdx, dtdy)


def mos_cat_predictor(grid: RawWeatherGrid) -> np.ndarray:
    """MOS CAT probability predictor |v| * DEF in m/s^2."""
    _require_horizontal(grid)
    return wind_speed(grid) * _deformation(grid)


def build_feature_cube(grid: RawWeatherGrid, timestamp: int, kind: CubeKind) -> FeatureCube:
    """Assemble the 12-channel feature cube: 6 raw fields then 6 indexes.

    Channel order is fixed by ``grids.CHANNEL_NAMES``. Raises NumericalError
    naming the channel and cell if any derived value is non-finite.
    """
    channels = [
        grid.u_wind,
        grid.v_wind,
        grid.temperature,
        grid.rel_humidity,
        grid.vertical_velocity,
        grid.pressure,
        richardson_number(grid),
        colson_panofsky(grid),
        ellrod_ti1(grid),
        wind_speed(grid),
        horiz_temp_gradient(grid),
        mos_cat_predictor(grid),
    ]
    data = np.stack(channels, axis=-1)
    if not np.all(np.isfinite(data)):
        bad = np.argwhere(~np.isfinite(data))[0]
        raise NumericalError(
            f"non-finite value in channel '{CHANNEL_NAMES[bad[-1]]}' at cell {tuple(int(i) for i in bad[:-1])}"
        )
    return FeatureCube(data=data.astype(np.float32), timestamp=timestamp, kind=kind)
