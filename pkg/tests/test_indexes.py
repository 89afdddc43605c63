"""Index module tests against independent scalar re-implementations.

The oracle functions below recompute each index at one cell with plain
Python arithmetic (explicit stencils, no shared helpers) so agreement with
the vectorized module is meaningful.
"""

import math

import numpy as np
import pytest

from turbcast.errors import GeometryError, NumericalError, ValidationError
from turbcast.grids import CHANNEL_NAMES, CubeKind
from turbcast.indexes import (
    GRAVITY,
    KAPPA,
    MS_TO_KT,
    P_REFERENCE,
    RI_MAX,
    RawWeatherGrid,
    build_feature_cube,
    colson_panofsky,
    ellrod_ti1,
    horiz_temp_gradient,
    local_level_spacing,
    mos_cat_predictor,
    richardson_number,
    vertical_derivative,
    vertical_wind_shear,
    wind_speed,
)


# ----------------------------------------------------------- scalar oracles
def d_dz(field, heights, i, j, k):
    H = len(heights)
    if k == 0:
        return (field[i, j, 1] - field[i, j, 0]) / (heights[1] - heights[0])
    if k == H - 1:
        return (field[i, j, H - 1] - field[i, j, H - 2]) / (heights[H - 1] - heights[H - 2])
    return (field[i, j, k + 1] - field[i, j, k - 1]) / (heights[k + 1] - heights[k - 1])


def d_dx(field, dx, i, j, k):
    L = field.shape[0]
    if i == 0:
        return (field[1, j, k] - field[0, j, k]) / dx
    if i == L - 1:
        return (field[L - 1, j, k] - field[L - 2, j, k]) / dx
    return (field[i + 1, j, k] - field[i - 1, j, k]) / (2 * dx)


def d_dy(field, dy, i, j, k):
    W = field.shape[1]
    if j == 0:
        return (field[i, 1, k] - field[i, 0, k]) / dy
    if j == W - 1:
        return (field[i, W - 1, k] - field[i, W - 2, k]) / dy
    return (field[i, j + 1, k] - field[i, j - 1, k]) / (2 * dy)


def dz_local(heights, k):
    H = len(heights)
    if k == 0:
        return heights[1] - heights[0]
    if k == H - 1:
        return heights[H - 1] - heights[H - 2]
    return (heights[k + 1] - heights[k - 1]) / 2.0


def oracle_theta(g, i, j, k):
    return g.temperature[i, j, k] * (P_REFERENCE / g.pressure[i, j, k]) ** KAPPA


def oracle_vws(g, i, j, k):
    du = d_dz(g.u_wind, g.level_heights, i, j, k)
    dv = d_dz(g.v_wind, g.level_heights, i, j, k)
    return math.sqrt(du * du + dv * dv)


def oracle_ri(g, i, j, k):
    theta = np.empty_like(g.temperature)
    for a in range(theta.shape[0]):
        for b in range(theta.shape[1]):
            for c in range(theta.shape[2]):
                theta[a, b, c] = oracle_theta(g, a, b, c)
    num = GRAVITY / theta[i, j, k] * d_dz(theta, g.level_heights, i, j, k)
    du = d_dz(g.u_wind, g.level_heights, i, j, k)
    dv = d_dz(g.v_wind, g.level_heights, i, j, k)
    denom = du * du + dv * dv
    if denom == 0.0:
        return math.copysign(RI_MAX, num) if num else 0.0
    return min(max(num / denom, -RI_MAX), RI_MAX)


def oracle_cp(g, i, j, k):
    vws = oracle_vws(g, i, j, k)
    ri = oracle_ri(g, i, j, k)
    dz = dz_local(g.level_heights, k)
    return (dz * vws) ** 2 * (1.0 - ri / 0.5) * MS_TO_KT**2


def oracle_def(g, i, j, k):
    dsh = d_dx(g.v_wind, g.cell_dx, i, j, k) + d_dy(g.u_wind, g.cell_dy, i, j, k)
    dst = d_dx(g.u_wind, g.cell_dx, i, j, k) - d_dy(g.v_wind, g.cell_dy, i, j, k)
    return math.sqrt(dsh * dsh + dst * dst)


def oracle_ti1(g, i, j, k):
    return oracle_vws(g, i, j, k) * oracle_def(g, i, j, k)


def oracle_speed(g, i, j, k):
    return math.sqrt(g.u_wind[i, j, k] ** 2 + g.v_wind[i, j, k] ** 2)


def oracle_tgrad(g, i, j, k):
    tx = d_dx(g.temperature, g.cell_dx, i, j, k)
    ty = d_dy(g.temperature, g.cell_dy, i, j, k)
    return math.sqrt(tx * tx + ty * ty)


def oracle_mos(g, i, j, k):
    return oracle_speed(g, i, j, k) * oracle_def(g, i, j, k)


def random_grid(seed=0, shape=(6, 5, 4)):
    rng = np.random.default_rng(seed)
    heights = np.sort(rng.uniform(9000, 12000, shape[2]))
    return RawWeatherGrid(
        u_wind=rng.uniform(-40, 40, shape),
        v_wind=rng.uniform(-40, 40, shape),
        temperature=rng.uniform(210, 240, shape),
        rel_humidity=rng.uniform(0, 100, shape),
        vertical_velocity=rng.uniform(-3, 3, shape),
        pressure=rng.uniform(25000, 35000, shape),
        level_heights=heights,
        cell_dx=13000.0,
        cell_dy=13000.0,
    )


def column_grid(u=None, v=None, T=None, P=None, heights=(0.0, 1000.0, 2000.0),
                shape=(4, 4, 3), dx=1000.0, dy=1000.0):
    """Grid from per-field callables of (x, y, z) in meters."""
    heights = np.asarray(heights, dtype=np.float64)
    x = np.arange(shape[0])[:, None, None] * dx
    y = np.arange(shape[1])[None, :, None] * dy
    z = heights[None, None, :]
    ones = np.ones(shape)
    build = lambda f, default: (f(x, y, z) * ones if f else default * ones)
    return RawWeatherGrid(
        u_wind=build(u, 0.0),
        v_wind=build(v, 0.0),
        temperature=build(T, 300.0),
        rel_humidity=50.0 * ones,
        vertical_velocity=0.0 * ones,
        pressure=build(P, P_REFERENCE),
        level_heights=heights,
        cell_dx=dx,
        cell_dy=dy,
    )


class TestWindSpeed:
    def test_three_four_five(self):
        g = column_grid(u=lambda x, y, z: 3.0, v=lambda x, y, z: 4.0)
        assert np.allclose(wind_speed(g), 5.0)


class TestVerticalDerivative:
    def test_linear_field_exact_everywhere(self):
        heights = np.array([0.0, 700.0, 1800.0, 2500.0])
        field = np.broadcast_to(0.004 * heights, (3, 3, 4)).copy()
        deriv = vertical_derivative(field, heights)
        assert np.allclose(deriv, 0.004, atol=1e-12)

    def test_local_spacing(self):
        heights = np.array([0.0, 1000.0, 2000.0])
        assert np.allclose(local_level_spacing(heights), [1000.0, 1000.0, 1000.0])
        heights = np.array([0.0, 500.0, 2000.0])
        assert np.allclose(local_level_spacing(heights), [500.0, 1000.0, 1500.0])


class TestRichardson:
    def test_known_profile(self):
        # theta = T when P = P0; dtheta/dz = 0.003 K/m, du/dz = 0.01 /s
        g = column_grid(T=lambda x, y, z: 300.0 + 0.003 * z, u=lambda x, y, z: 0.01 * z)
        ri = richardson_number(g)
        # bottom level: one-sided stencils, theta = 300
        assert ri[1, 1, 0] == pytest.approx(GRAVITY * 0.003 / 300.0 / 1e-4, rel=1e-12)
        assert ri[1, 1, 0] == pytest.approx(0.980665, abs=5e-4)
        # interior level: theta = 303
        assert ri[1, 1, 1] == pytest.approx(GRAVITY * 0.003 / 303.0 / 1e-4, rel=1e-12)

    def test_zero_shear_caps_at_ri_max_with_numerator_sign(self):
        stable = column_grid(T=lambda x, y, z: 300.0 + 0.003 * z)
        assert np.all(richardson_number(stable) == RI_MAX)
        unstable = column_grid(T=lambda x, y, z: 300.0 - 0.05 * z)
        assert np.all(richardson_number(unstable) == -RI_MAX)

    def test_matches_scalar_oracle_on_random_grid(self):
        g = random_grid(3)
        ri = richardson_number(g)
        rng = np.random.default_rng(7)
        for _ in range(20):
            i, j, k = (rng.integers(0, s) for s in g.grid_shape)
            assert ri[i, j, k] == pytest.approx(oracle_ri(g, i, j, k), rel=1e-9, abs=1e-12)

    def test_needs_two_levels(self):
        ones = np.ones((3, 3, 1))
        g = RawWeatherGrid(ones, ones, 300 * ones, ones, ones, 30000 * ones,
                           level_heights=np.array([10000.0]))
        with pytest.raises(GeometryError):
            richardson_number(g)


class TestColsonPanofsky:
    def test_neutral_column_value(self):
        # constant theta (T and P uniform) so Ri = 0; shear 0.01 /s; dz = 1000 m
        g = column_grid(u=lambda x, y, z: 0.01 * z)
        cp = colson_panofsky(g)
        expected = (1000.0 * 0.01) ** 2 * MS_TO_KT**2
        assert cp[2, 2, 1] == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(377.836, abs=0.1)

    def test_matches_scalar_oracle(self):
        g = random_grid(5)
        cp = colson_panofsky(g)
        rng = np.random.default_rng(11)
        for _ in range(20):
            i, j, k = (rng.integers(0, s) for s in g.grid_shape)
            assert cp[i, j, k] == pytest.approx(oracle_cp(g, i, j, k), rel=1e-9, abs=1e-9)


class TestEllrod:
    def test_pure_stretching_deformation(self):
        # du/dx = 1e-4, dv/dy = -1e-4 -> DST = 2e-4, DSH = 0; shear 0.01 /s
        g = column_grid(u=lambda x, y, z: 1e-4 * x + 0.01 * z, v=lambda x, y, z: -1e-4 * y)
        ti1 = ellrod_ti1(g)
        assert np.allclose(ti1, 0.01 * 2e-4, rtol=1e-10)

    def test_pure_shearing_deformation(self):
        # dv/dx = 3e-4 -> DSH = 3e-4; shear 0.02 /s
        g = column_grid(u=lambda x, y, z: 0.02 * z, v=lambda x, y, z: 3e-4 * x)
        assert np.allclose(ellrod_ti1(g), 0.02 * 3e-4, rtol=1e-10)

    def test_matches_scalar_oracle(self):
        g = random_grid(9)
        ti1 = ellrod_ti1(g)
        rng = np.random.default_rng(13)
        for _ in range(20):
            i, j, k = (rng.integers(0, s) for s in g.grid_shape)
            assert ti1[i, j, k] == pytest.approx(oracle_ti1(g, i, j, k), rel=1e-9, abs=1e-15)

    def test_needs_two_cells_horizontally(self):
        ones = np.ones((1, 3, 3))
        g = RawWeatherGrid(ones, ones, 300 * ones, ones, ones, 30000 * ones,
                           level_heights=np.array([9000.0, 10000.0, 11000.0]))
        with pytest.raises(GeometryError):
            ellrod_ti1(g)


class TestTempGradientAndMos:
    def test_linear_temperature_gradient(self):
        g = column_grid(T=lambda x, y, z: 300.0 + 2e-3 * x)
        assert np.allclose(horiz_temp_gradient(g), 2e-3, rtol=1e-10)

    def test_mos_oracle(self):
        g = random_grid(21)
        mos = mos_cat_predictor(g)
        rng = np.random.default_rng(17)
        for _ in range(20):
            i, j, k = (rng.integers(0, s) for s in g.grid_shape)
            assert mos[i, j, k] == pytest.approx(oracle_mos(g, i, j, k), rel=1e-9, abs=1e-15)


class TestRawWeatherGridValidation:
    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValidationError):
            RawWeatherGrid(np.ones((2, 2, 2)), np.ones((2, 2, 3)), np.ones((2, 2, 2)) * 300,
                           np.ones((2, 2, 2)), np.ones((2, 2, 2)), np.ones((2, 2, 2)) * 3e4,
                           level_heights=np.array([0.0, 1000.0]))

    def test_rejects_nonpositive_temperature(self):
        ones = np.ones((2, 2, 2))
        with pytest.raises(ValidationError, match="temperature"):
            RawWeatherGrid(ones, ones, 0 * ones, ones, ones, 3e4 * ones,
                           level_heights=np.array([0.0, 1000.0]))

    def test_rejects_unsorted_levels(self):
        ones = np.ones((2, 2, 2))
        with pytest.raises(ValidationError, match="increasing"):
            RawWeatherGrid(ones, ones, 300 * ones, ones, ones, 3e4 * ones,
                           level_heights=np.array([1000.0, 0.0]))


class TestFeatureCubeAssembly:
    def test_channel_order_and_raw_passthrough(self):
        g = random_grid(31)
        cube = build_feature_cube(g, timestamp=7, kind=CubeKind.HISTORICAL)
        assert cube.data.shape == (*g.grid_shape, 12)
        assert cube.timestamp == 7
        raw = {
            "u_wind": g.u_wind, "v_wind": g.v_wind, "temperature": g.temperature,
            "rel_humidity": g.rel_humidity, "vertical_velocity": g.vertical_velocity,
            "pressure": g.pressure,
        }
        for ch, name in enumerate(CHANNEL_NAMES[:6]):
            assert np.allclose(cube.data[..., ch], raw[name].astype(np.float32))
        derived = {
            "richardson_number": richardson_number(g),
            "colson_panofsky": colson_panofsky(g),
            "ellrod_ti1": ellrod_ti1(g),
            "wind_speed": wind_speed(g),
            "horiz_temp_gradient": horiz_temp_gradient(g),
            "mos_cat_predictor": mos_cat_predictor(g),
        }
        for ch, name in enumerate(CHANNEL_NAMES[6:], start=6):
            assert np.allclose(cube.data[..., ch], derived[name].astype(np.float32))

    def test_vws_consistent_between_cp_and_ti1_paths(self):
        # both indexes consume the same shear field; spot-check via oracle
        g = random_grid(41)
        vws = vertical_wind_shear(g)
        assert vws[2, 3, 1] == pytest.approx(oracle_vws(g, 2, 3, 1), rel=1e-12)

    def test_nonfinite_input_names_offending_channel(self):
        g = random_grid(43)
        u = g.u_wind.copy()
        u[1, 2, 0] = np.nan
        bad = RawWeatherGrid(u, g.v_wind, g.temperature, g.rel_humidity,
                             g.vertical_velocity, g.pressure,
                             level_heights=g.level_heights)
        with pytest.raises(NumericalError, match="channel"):
            build_feature_cube(bad, timestamp=0, kind=CubeKind.HISTORICAL)

    def test_float32_output(self):
        g = random_grid(47)
        cube = build_feature_cube(g, timestamp=0, kind=CubeKind.NWP_FORECAST)
        assert cube.data.dtype == np.float32
        assert cube.kind is CubeKind.NWP_FORECAST
