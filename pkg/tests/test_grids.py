import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frontlab.grids import (ScalarField, StripGrid, TorusGrid, divergence,
                            field_from_function, gradient, integrate,
                            inverse_laplacian, l2_norm, laplacian, load_field,
                            mean, save_field, save_field_csv, spectral_resample)
from oracles import centered_difference_gradient

TWO_PI = 2 * np.pi


def random_bandlimited(grid, seed, kmax=5):
    rng = np.random.default_rng(seed)
    n = grid.n_per_dim
    vhat = np.zeros((n,) * grid.dim, dtype=complex)
    for _ in range(12):
        k = rng.integers(-kmax, kmax + 1, size=grid.dim)
        amp = rng.normal() + 1j * rng.normal()
        vhat[tuple(k % n)] += amp
        vhat[tuple((-k) % n)] += np.conj(amp)
    vals = np.real(np.fft.ifftn(vhat)) * n ** grid.dim / 2
    return ScalarField(grid, vals)


class TestTorusGrid:
    def test_invariants(self):
        g = TorusGrid(2, 32)
        assert g.spacing == 1 / 32
        assert g.shape == (32, 32)
        with pytest.raises(ValueError):
            TorusGrid(2, 33)
        with pytest.raises(ValueError):
            TorusGrid(2, 4)
        with pytest.raises(ValueError):
            TorusGrid(4, 32)

    def test_axis_covers_cell(self):
        g = TorusGrid(2, 16)
        ax = g.axis()
        assert ax[0] == -0.5
        assert ax[-1] == pytest.approx(0.5 - g.spacing)


class TestGradient:
    def test_constant_field(self):
        g = TorusGrid(2, 16)
        f = ScalarField(g, np.full(g.shape, 3.7))
        for comp in gradient(f):
            assert np.max(np.abs(comp.values)) < 1e-13

    def test_resolved_mode_exact(self):
        g = TorusGrid(2, 32)
        x, _ = g.meshgrid()
        f = ScalarField(g, np.sin(TWO_PI * x))
        gx, gy = gradient(f)
        assert np.max(np.abs(gx.values - TWO_PI * np.cos(TWO_PI * x))) < 1e-12
        assert np.max(np.abs(gy.values)) < 1e-12

    def test_matches_fd_oracle(self):
        g = TorusGrid(2, 64)
        f = random_bandlimited(g, seed=1)
        gx = gradient(f)[0].values
        fd = centered_difference_gradient(f.values, g.spacing, axis=0)
        # centered differences deviate by h^2/6 * |f_xxx| from the truth
        fxxx = gradient(ScalarField(g, gradient(ScalarField(g, gx))[0].values))[0]
        bound = g.spacing ** 2 / 6.0 * np.max(np.abs(fxxx.values))
        err = np.max(np.abs(gx - fd))
        assert err < 2.0 * bound
        assert err > 0.1 * bound  # two-sided: the deviation is genuinely O(h^2)

    def test_rejects_nonfinite(self):
        g = TorusGrid(2, 16)
        vals = np.zeros(g.shape)
        f = ScalarField(g, vals)
        f.values[0, 0] = np.inf
        with pytest.raises(ValueError):
            gradient(f)

    def test_strip_gradient_linear_exact(self):
        strip = StripGrid(2.0, 41, TorusGrid(1, 8))
        x = strip.x_axis()[:, None]
        f = ScalarField(strip, (2.0 * x + 1.0) * np.ones((1, 8)))
        gx = gradient(f)[0]
        assert np.max(np.abs(gx.values - 2.0)) < 1e-12


class TestInverseLaplacian:
    def test_single_mode(self):
        g = TorusGrid(2, 32)
        _, y = g.meshgrid()
        w = inverse_laplacian(ScalarField(g, np.sin(TWO_PI * y)))
        assert np.max(np.abs(w.values - np.sin(TWO_PI * y) / (4 * np.pi ** 2))) < 1e-14

    def test_zero_field(self):
        g = TorusGrid(2, 16)
        w = inverse_laplacian(ScalarField(g, np.zeros(g.shape)))
        assert np.all(w.values == 0.0)

    def test_round_trip(self):
        g = TorusGrid(2, 64)
        f = random_bandlimited(g, seed=2)
        f = ScalarField(g, f.values - np.mean(f.values))
        w = inverse_laplacian(f)
        back = laplacian(w)
        rel = np.max(np.abs(-back.values - f.values)) / np.max(np.abs(f.values))
        assert rel < 1e-10

    def test_rejects_nonzero_mean(self):
        g = TorusGrid(2, 16)
        with pytest.raises(ValueError):
            inverse_laplacian(ScalarField(g, np.ones(g.shape)))


class TestIntegrate:
    def test_constant(self):
        g = TorusGrid(2, 16)
        assert integrate(ScalarField(g, np.ones(g.shape))) == pytest.approx(1.0)

    def test_mean_zero_mode(self):
        g = TorusGrid(2, 32)
        x, _ = g.meshgrid()
        assert abs(integrate(ScalarField(g, np.sin(TWO_PI * x)))) < 1e-14

    def test_sin_squared(self):
        g = TorusGrid(2, 32)
        x, _ = g.meshgrid()
        assert integrate(ScalarField(g, np.sin(TWO_PI * x) ** 2)) == pytest.approx(0.5)

    def test_strip_trapezoid(self):
        strip = StripGrid(3.0, 31, TorusGrid(1, 8))
        x = strip.x_axis()[:, None]
        val = integrate(ScalarField(strip, x * np.ones((1, 8))))
        assert val == pytest.approx(4.5)  # int_0^3 x dx


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gradient_components_integrate_to_zero(seed):
    g = TorusGrid(2, 32)
    f = random_bandlimited(g, seed)
    for comp in gradient(f):
        assert abs(integrate(comp)) < 1e-12 * (1 + np.max(np.abs(f.values)))


def test_divergence_of_gradient_is_laplacian():
    g = TorusGrid(2, 32)
    f = random_bandlimited(g, seed=3)
    div = divergence(gradient(f))
    lap = laplacian(f)
    assert np.max(np.abs(div.values - lap.values)) < 1e-9


def test_spectral_resample_roundtrip():
    g = TorusGrid(2, 32)
    f = random_bandlimited(g, seed=4)
    up = spectral_resample(f, 64)
    back = spectral_resample(up, 32)
    assert np.max(np.abs(back.values - f.values)) < 1e-11


def test_l2_norm_and_mean():
    g = TorusGrid(2, 32)
    x, _ = g.meshgrid()
    f = ScalarField(g, np.sin(TWO_PI * x))
    assert l2_norm(f) == pytest.approx(np.sqrt(0.5))
    assert abs(mean(f)) < 1e-15


class TestFieldIO:
    def test_torus_roundtrip(self, tmp_path):
        g = TorusGrid(2, 16)
        f = random_bandlimited(g, seed=5)
        path = tmp_path / "field.bin"
        save_field(f, path)
        g2 = load_field(path)
        assert isinstance(g2.grid, TorusGrid)
        assert g2.grid.n_per_dim == 16
        assert np.array_equal(g2.values, f.values)

    def test_strip_roundtrip(self, tmp_path):
        strip = StripGrid(2.5, 21, TorusGrid(1, 8), x0=-1.0)
        vals = np.arange(21 * 8, dtype=float).reshape(21, 8)
        f = ScalarField(strip, vals)
        path = tmp_path / "strip.bin"
        save_field(f, path)
        f2 = load_field(path)
        assert isinstance(f2.grid, StripGrid)
        assert f2.grid.x0 == -1.0
        assert f2.grid.length_x == pytest.approx(2.5)
        assert np.array_equal(f2.values, vals)

    def test_csv_export(self, tmp_path):
        g = TorusGrid(2, 8)
        f = field_from_function(g, lambda x, y: x + 2 * y)
        path = tmp_path / "field.csv"
        save_field_csv(f, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "x1,x2,value"
        assert len(lines) == 65


def test_field_shape_mismatch_rejected():
    g = TorusGrid(2, 16)
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros((16, 8)))
    with pytest.raises(ValueError):
        ScalarField(g, np.full((16, 16), np.nan))
