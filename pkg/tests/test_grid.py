"""Tests for the periodic grid, finite-difference kernels and interpolation."""

import numpy as np
import pytest

from kmflow.grid import (
    ScalarField,
    diff,
    interpolate,
    interpolate_many,
    make_grid,
    wrap_displacement,
)


def sine_field(grid, freq=1):
    x = grid.axis_coords(0)
    return ScalarField(grid, np.sin(2.0 * np.pi * freq * x))


class TestMakeGrid:
    def test_1d_spacing(self):
        g = make_grid(1, [64], [1.0])
        assert g.spacing == (1.0 / 64,)
        assert g.node_count == 64

    def test_2d_node_count(self):
        g = make_grid(2, [32, 32], [1.0, 1.0])
        assert g.node_count == 1024
        assert g.shape == (32, 32)

    def test_rejects_3d(self):
        with pytest.raises(ValueError, match="unsupported dimension"):
            make_grid(3, [16, 16, 16], [1.0, 1.0, 1.0])

    def test_rejects_small_resolution(self):
        with pytest.raises(ValueError):
            make_grid(1, [4], [1.0])

    def test_rejects_degenerate_period(self):
        with pytest.raises(ValueError):
            make_grid(1, [64], [0.0])

    def test_field_shape_validated(self):
        g = make_grid(1, [16], [1.0])
        with pytest.raises(ValueError):
            ScalarField(g, np.zeros(17))

    def test_field_rejects_nan(self):
        g = make_grid(1, [16], [1.0])
        vals = np.zeros(16)
        vals[3] = np.nan
        with pytest.raises(ValueError):
            ScalarField(g, vals)


class TestDiff:
    def test_first_derivative_of_sine(self):
        g = make_grid(1, [256])
        f = sine_field(g)
        x = g.axis_coords(0)
        exact = 2.0 * np.pi * np.cos(2.0 * np.pi * x)
        err2 = np.max(np.abs(diff(f, 0, order=1, accuracy=2).values - exact))
        err4 = np.max(np.abs(diff(f, 0, order=1, accuracy=4).values - exact))
        assert err2 < 1e-3
        assert err4 < 1e-7

    def test_constant_field_derivative_is_zero(self):
        g = make_grid(2, [16, 16])
        f = ScalarField(g, np.full(g.shape, 3.7))
        for axis in range(2):
            assert np.all(diff(f, axis).values == 0.0)

    def test_second_derivative_of_sine(self):
        g = make_grid(1, [256])
        f = sine_field(g)
        x = g.axis_coords(0)
        exact = -4.0 * np.pi**2 * np.sin(2.0 * np.pi * x)
        err = np.max(np.abs(diff(f, 0, order=2, accuracy=4).values - exact))
        assert err < 1e-5

    def test_shift_equivariance_exact(self):
        rng = np.random.default_rng(7)
        g = make_grid(2, [16, 24])
        f = ScalarField(g, rng.standard_normal(g.shape))
        for axis in range(2):
            d = diff(f, axis).values
            shifted = ScalarField(g, np.roll(f.values, 1, axis=axis))
            d_shifted = diff(shifted, axis).values
            assert np.array_equal(np.roll(d, 1, axis=axis), d_shifted)

    def test_acc4_exact_on_cubics_interior(self):
        # Cubic data sampled on the grid: the 5-point first-derivative stencil
        # is exact away from the periodic seam.
        g = make_grid(1, [64])
        x = g.axis_coords(0)
        f = ScalarField(g, x**3 - 0.2 * x**2 + 0.05 * x)
        d = diff(f, 0, order=1, accuracy=4).values
        exact = 3 * x**2 - 0.4 * x + 0.05
        interior = slice(2, 62)
        rel = np.abs(d[interior] - exact[interior]) / np.maximum(np.abs(exact[interior]), 1.0)
        assert np.max(rel) < 1e-12

    def test_rejects_bad_axis(self):
        g = make_grid(1, [16])
        f = sine_field(g)
        with pytest.raises(ValueError):
            diff(f, 1)


class TestInterpolate:
    def test_constant_reproduced(self):
        g = make_grid(2, [16, 16])
        f = ScalarField(g, np.full(g.shape, 2.5))
        assert interpolate(f, [0.3, 0.77]) == pytest.approx(2.5, abs=1e-15)

    def test_node_values_reproduced(self):
        rng = np.random.default_rng(3)
        g = make_grid(1, [32])
        f = ScalarField(g, rng.standard_normal(g.shape))
        x = g.axis_coords(0)
        for j in (0, 5, 31):
            assert interpolate(f, [x[j]]) == pytest.approx(f.values[j], abs=1e-13)

    def test_sine_accuracy(self):
        g = make_grid(1, [256])
        f = sine_field(g)
        got = interpolate(f, [0.123])
        assert abs(got - np.sin(2.0 * np.pi * 0.123)) < 1e-6

    def test_periodicity_exact(self):
        rng = np.random.default_rng(11)
        g = make_grid(1, [32])
        f = ScalarField(g, rng.standard_normal(g.shape))
        pts = rng.uniform(0.0, 1.0, size=(20, 1))
        a = interpolate_many(f, pts)
        b = interpolate_many(f, pts + 1.0)
        # One period shift maps the query to the same stencil cells.
        assert np.allclose(a, b, atol=1e-12)

    def test_linear_in_cell_exact(self):
        # Data linear across the whole stencil window is reproduced exactly.
        g = make_grid(1, [64])
        x = g.axis_coords(0)
        f = ScalarField(g, 0.25 * x)
        got = interpolate(f, [0.5 + 0.25 / 64])
        assert got == pytest.approx(0.25 * (0.5 + 0.25 / 64), abs=1e-14)

    def test_2d_matches_tensor_product(self):
        g = make_grid(2, [32, 32])
        c = g.coords()
        f = ScalarField(g, np.sin(2 * np.pi * c[..., 0]) * np.cos(2 * np.pi * c[..., 1]))
        got = interpolate(f, [0.21, 0.64])
        exact = np.sin(2 * np.pi * 0.21) * np.cos(2 * np.pi * 0.64)
        assert abs(got - exact) < 1e-4


class TestWrap:
    def test_band_convention(self):
        assert wrap_displacement(0.5) == 0.5
        assert wrap_displacement(-0.5) == 0.5
        assert wrap_displacement(0.75) == pytest.approx(-0.25)
        assert wrap_displacement(-0.3) == pytest.approx(-0.3)

    def test_random_values_in_band(self):
        rng = np.random.default_rng(5)
        d = rng.uniform(-10, 10, size=1000)
        w = wrap_displacement(d)
        assert np.all(w > -0.5) and np.all(w <= 0.5)
        # Wrapping changes values by integer multiples of the period.
        assert np.allclose(np.round(d - w), d - w, atol=1e-12)
