"""Structured grids on the unit torus and on strips, with the basic operators.

Torus fields live on the periodicity cell [-1/2, 1/2)^d sampled at n uniform
points per dimension; derivatives are pseudo-spectral (FFT).  Strip fields are
periodic in the cross directions and bounded in x1; strip derivatives are
second-order finite differences, one-sided at the ends.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

MEAN_TOL = 1e-12


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the d-dimensional unit torus [-1/2, 1/2)^d."""

    dim: int
    n_per_dim: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"torus dimension must be 1, 2 or 3, got {self.dim}")
        if self.n_per_dim < 8:
            raise ValueError(f"need at least 8 points per dimension, got {self.n_per_dim}")
        if self.n_per_dim % 2 != 0:
            raise ValueError(f"n_per_dim must be even, got {self.n_per_dim}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_per_dim

    @property
    def shape(self) -> tuple:
        return (self.n_per_dim,) * self.dim

    def axis(self) -> np.ndarray:
        """Node coordinates along one axis (all axes are identical)."""
        return -0.5 + self.spacing * np.arange(self.n_per_dim)

    def meshgrid(self) -> list:
        return list(np.meshgrid(*([self.axis()] * self.dim), indexing="ij"))

    def wavenumbers(self) -> list:
        """Angular wavenumbers 2*pi*k along each axis, fftfreq ordering."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.n_per_dim, d=self.spacing)
        return [k] * self.dim


@dataclass(frozen=True)
class StripGrid:
    """Grid on [x0, x0+length_x] x T^(d-1): bounded in x1, periodic across.

    Nodes include both x1 endpoints, so spacing_x = length_x / (n_x - 1).
    """

    length_x: float
    n_x: int
    cross_section: TorusGrid
    x0: float = 0.0

    def __post_init__(self):
        if self.length_x <= 0:
            raise ValueError("strip length must be positive")
        if self.n_x < 4:
            raise ValueError("need at least 4 nodes along the strip")

    @property
    def dim(self) -> int:
        return self.cross_section.dim + 1

    @property
    def spacing_x(self) -> float:
        return self.length_x / (self.n_x - 1)

    @property
    def shape(self) -> tuple:
        return (self.n_x,) + self.cross_section.shape

    def x_axis(self) -> np.ndarray:
        return self.x0 + self.spacing_x * np.arange(self.n_x)


@dataclass
class ScalarField:
    """Values of a scalar on a TorusGrid or StripGrid."""

    grid: TorusGrid | StripGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


def field_from_function(grid, fn) -> ScalarField:
    """Sample fn(*coords) on the grid nodes."""
    if isinstance(grid, TorusGrid):
        coords = grid.meshgrid()
    else:
        axes = [grid.x_axis()] + [grid.cross_section.axis()] * grid.cross_section.dim
        coords = list(np.meshgrid(*axes, indexing="ij"))
    return ScalarField(grid, np.asarray(fn(*coords), dtype=float))


def _check_torus(field: ScalarField, op: str) -> TorusGrid:
    if not isinstance(field.grid, TorusGrid):
        raise ValueError(f"{op} requires a torus field")
    return field.grid


# ---------------------------------------------------------------------------
# spectral machinery (torus)
# ---------------------------------------------------------------------------

def _spectral_derivative(values: np.ndarray, grid: TorusGrid, axis: int) -> np.ndarray:
    # Nyquist mode is zeroed: its exact derivative is not representable and
    # keeping it makes the result complex-asymmetric.
    n = grid.n_per_dim
    vhat = np.fft.fft(values, axis=axis)
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=grid.spacing)
    k[n // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    vhat *= 1j * k.reshape(shape)
    return np.real(np.fft.ifft(vhat, axis=axis))


def _minus_laplacian_symbol(grid: TorusGrid) -> np.ndarray:
    ks = grid.wavenumbers()
    sym = np.zeros(grid.shape)
    for axis, k in enumerate(ks):
        shape = [1] * grid.dim
        shape[axis] = grid.n_per_dim
        sym = sym + (k ** 2).reshape(shape)
    return sym


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def gradient(field: ScalarField) -> list:
    """Gradient of a scalar field, one component field per dimension.

    Spectral on the torus; on strips second-order centered differences in x1
    (one-sided second-order at the ends) and periodic centered differences in
    the cross directions.
    """
    if not np.all(np.isfinite(field.values)):
        raise ValueError("gradient of non-finite field")
    if isinstance(field.grid, TorusGrid):
        grid = field.grid
        return [
            ScalarField(grid, _spectral_derivative(field.values, grid, axis))
            for axis in range(grid.dim)
        ]
    grid = field.grid
    v = field.values
    out = []
    # bounded x1 direction
    hx = grid.spacing_x
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (2.0 * hx)
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * hx)
    d[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * hx)
    out.append(ScalarField(grid, d))
    # periodic cross directions
    hc = grid.cross_section.spacing
    for axis in range(1, grid.dim):
        d = (np.roll(v, -1, axis=axis) - np.roll(v, 1, axis=axis)) / (2.0 * hc)
        out.append(ScalarField(grid, d))
    return out


def laplacian(field: ScalarField) -> ScalarField:
    """Spectral Laplacian on the torus."""
    grid = _check_torus(field, "laplacian")
    vhat = np.fft.fftn(field.values)
    vhat *= -_minus_laplacian_symbol(grid)
    return ScalarField(grid, np.real(np.fft.ifftn(vhat)))


def divergence(components: list) -> ScalarField:
    """Spectral divergence of a vector of torus fields."""
    grid = _check_torus(components[0], "divergence")
    total = np.zeros(grid.shape)
    for axis, comp in enumerate(components):
        total += _spectral_derivative(comp.values, grid, axis)
    return ScalarField(grid, total)


def inverse_laplacian(field: ScalarField) -> ScalarField:
    """Unique zero-mean w with -Delta w = field, on the torus.

    The input must have zero mean (the constant mode is not invertible).
    """
    grid = _check_torus(field, "inverse_laplacian")
    m = mean(field)
    if abs(m) > MEAN_TOL * max(1.0, float(np.max(np.abs(field.values)))):
        raise ValueError(f"inverse_laplacian needs a zero-mean field, got mean {m:g}")
    sym = _minus_laplacian_symbol(grid)
    sym_safe = sym.copy()
    sym_safe[(0,) * grid.dim] = 1.0
    vhat = np.fft.fftn(field.values) / sym_safe
    vhat[(0,) * grid.dim] = 0.0
    return ScalarField(grid, np.real(np.fft.ifftn(vhat)))


def integrate(field: ScalarField) -> float:
    """Quadrature over the field's domain.

    On the torus the uniform rectangle rule, which is exact for trigonometric
    polynomials; on strips trapezoidal in x1 times the rectangle rule across.
    """
    if isinstance(field.grid, TorusGrid):
        return float(np.sum(field.values)) * field.grid.spacing ** field.grid.dim
    grid = field.grid
    w = np.ones(grid.n_x)
    w[0] = w[-1] = 0.5
    cross_weight = grid.cross_section.spacing ** grid.cross_section.dim
    sums = field.values.reshape(grid.n_x, -1).sum(axis=1)
    return float(np.dot(w, sums)) * grid.spacing_x * cross_weight


def mean(field: ScalarField) -> float:
    if isinstance(field.grid, TorusGrid):
        return float(np.mean(field.values))
    return integrate(field) / (field.grid.length_x * 1.0)


def l2_norm(field: ScalarField) -> float:
    """L2 norm with respect to the domain quadrature."""
    sq = ScalarField(field.grid, field.values ** 2)
    return float(np.sqrt(integrate(sq)))


def spectral_resample(field: ScalarField, n_new: int) -> ScalarField:
    """Resample a torus field to a new resolution by Fourier padding/truncation."""
    grid = _check_torus(field, "spectral_resample")
    n = grid.n_per_dim
    if n_new == n:
        return field.copy()
    vhat = np.fft.fftn(field.values)
    # unbalanced Nyquist modes cannot move between resolutions consistently
    for axis in range(grid.dim):
        idx = [slice(None)] * grid.dim
        idx[axis] = n // 2
        vhat[tuple(idx)] = 0.0
    out_hat = np.zeros((n_new,) * grid.dim, dtype=complex)
    m = min(n, n_new)
    half = m // 2
    src = [np.r_[0:half, n - half + 1:n]] * grid.dim
    dst = [np.r_[0:half, n_new - half + 1:n_new]] * grid.dim
    out_hat[np.ix_(*dst)] = vhat[np.ix_(*src)]
    out = np.real(np.fft.ifftn(out_hat)) * (n_new / n) ** grid.dim
    return ScalarField(TorusGrid(grid.dim, n_new), out)


# ---------------------------------------------------------------------------
# field I/O
# ---------------------------------------------------------------------------

_MAGIC_TORUS = 1
_MAGIC_STRIP = 2


def save_field(field: ScalarField, path) -> None:
    """Flat binary dump: kind, dim, n per axis, [strip extent], row-major f64."""
    with open(path, "wb") as fh:
        if isinstance(field.grid, TorusGrid):
            g = field.grid
            fh.write(struct.pack("<qq", _MAGIC_TORUS, g.dim))
            fh.write(struct.pack(f"<{g.dim}q", *g.shape))
        else:
            g = field.grid
            fh.write(struct.pack("<qq", _MAGIC_STRIP, g.dim))
            fh.write(struct.pack(f"<{g.dim}q", *g.shape))
            fh.write(struct.pack("<dd", g.x0, g.length_x))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def load_field(path) -> ScalarField:
    with open(path, "rb") as fh:
        kind, dim = struct.unpack("<qq", fh.read(16))
        shape = struct.unpack(f"<{dim}q", fh.read(8 * dim))
        if kind == _MAGIC_TORUS:
            grid = TorusGrid(dim, shape[0])
        elif kind == _MAGIC_STRIP:
            x0, length_x = struct.unpack("<dd", fh.read(16))
            grid = StripGrid(length_x, shape[0], TorusGrid(dim - 1, shape[1]), x0=x0)
        else:
            raise ValueError(f"unknown field file kind {kind}")
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(shape)
    return ScalarField(grid, data.copy())


def save_field_csv(field: ScalarField, path) -> None:
    """Coordinate/value CSV, intended for small grids only."""
    if isinstance(field.grid, TorusGrid):
        axes = [field.grid.axis()] * field.grid.dim
    else:
        axes = [field.grid.x_axis()] + [field.grid.cross_section.axis()] * field.grid.cross_section.dim
    coords = np.meshgrid(*axes, indexing="ij")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(len(axes))] + ["value"])
        flat = [c.ravel() for c in coords] + [field.values.ravel()]
        for row in zip(*flat):
            writer.writerow([f"{v:.17g}" for v in row])
