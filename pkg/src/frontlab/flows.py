"""Incompressible mean-zero periodic flow families on the unit torus.

Flows are stored as an amplitude-1 profile plus a scalar amplitude, so that
rescaling is exact and cheap.  2D flows built from a stream function H carry
u = (-dH/dx2, dH/dx1) and are divergence-free by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import (
    ScalarField,
    TorusGrid,
    divergence,
    field_from_function,
    gradient,
    integrate,
    inverse_laplacian,
    load_field,
    mean,
)

TWO_PI = 2.0 * np.pi

# closed-form kinds understood by the fast path-evaluation kernels
KIND_ZERO = "zero"
KIND_CELLULAR = "cellular"
KIND_ROTATED = "rotated-cellular"
KIND_SHEAR = "shear"
KIND_GENERIC = "generic"


@dataclass
class PeriodicFlow:
    """Periodic incompressible mean-zero velocity field with an amplitude."""

    grid: TorusGrid
    profile_components: list
    amplitude: float = 1.0
    kind: str = KIND_GENERIC
    stream_profile: np.ndarray | None = None  # H at amplitude 1, 2D only
    shear_profile: np.ndarray | None = None  # cross-section profile, shear only
    shear_axis: int = 0
    name: str = ""

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def components(self) -> list:
        return [
            ScalarField(self.grid, self.amplitude * c) for c in self.profile_components
        ]

    @property
    def stream_function(self) -> ScalarField | None:
        if self.stream_profile is None:
            return None
        return ScalarField(self.grid, self.amplitude * self.stream_profile)

    def sup_norm(self) -> float:
        return abs(self.amplitude) * max(
            float(np.max(np.abs(c))) for c in self.profile_components
        )

    def profile_lipschitz(self) -> float:
        """Grid estimate of the Lipschitz constant of the amplitude-1 profile.

        Maximum over nodes of the spectral-Jacobian operator norm.
        """
        rows = [
            [g.values for g in gradient(ScalarField(self.grid, c))]
            for c in self.profile_components
        ]
        frob2 = np.zeros(self.grid.shape)
        for row in rows:
            for entry in row:
                frob2 += entry ** 2
        if self.dim == 2:
            det = rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0]
            disc = np.sqrt(np.maximum(frob2 ** 2 - 4.0 * det ** 2, 0.0))
            sig2 = 0.5 * (frob2 + disc)
            return float(np.sqrt(np.max(sig2)))
        return float(np.sqrt(np.max(frob2)))


@dataclass
class ShearProfile:
    """Mean-zero profile on the cross-section torus, advected along one axis."""

    profile: ScalarField
    direction: int = 0

    def __post_init__(self):
        m = mean(self.profile)
        scale_ref = max(1.0, float(np.max(np.abs(self.profile.values))))
        if abs(m) > 1e-12 * scale_ref:
            raise ValueError(f"shear profile must have zero mean, got {m:g}")


@dataclass
class CounterexampleFlow:
    """Shear-profile pair (chi_R, u_R = chi_R - 1) concentrated near lattice points."""

    R: float
    chi_R: ScalarField
    u_R: ScalarField


@dataclass
class FlowDiagnostics:
    max_abs_divergence: float
    component_means: list
    sup_norm: float
    lipschitz_estimate: float
    passes: bool


# ---------------------------------------------------------------------------
# constructions
# ---------------------------------------------------------------------------

def make_cellular(grid: TorusGrid) -> PeriodicFlow:
    """Prototype cellular flow, stream function sin(2 pi x1) sin(2 pi x2)."""
    if grid.dim != 2:
        raise ValueError("cellular flow is two-dimensional")
    x, y = grid.meshgrid()
    u1 = -TWO_PI * np.sin(TWO_PI * x) * np.cos(TWO_PI * y)
    u2 = TWO_PI * np.cos(TWO_PI * x) * np.sin(TWO_PI * y)
    h = np.sin(TWO_PI * x) * np.sin(TWO_PI * y)
    return PeriodicFlow(grid, [u1, u2], 1.0, KIND_CELLULAR, stream_profile=h,
                        name="cellular")


def make_rotated_cellular(grid: TorusGrid) -> PeriodicFlow:
    """Cellular flow with diamond cells, stream function cos(2 pi x1) - cos(2 pi x2).

    Same lattice of closed cells as the prototype but with separatrices along
    the diagonals, so it probes a genuinely different cell geometry.
    """
    if grid.dim != 2:
        raise ValueError("cellular flow is two-dimensional")
    x, y = grid.meshgrid()
    u1 = TWO_PI * np.sin(TWO_PI * y)
    u2 = -TWO_PI * np.sin(TWO_PI * x)
    h = np.cos(TWO_PI * x) - np.cos(TWO_PI * y)
    return PeriodicFlow(grid, [u1, u2], 1.0, KIND_ROTATED, stream_profile=h,
                        name="rotated-cellular")


def make_zero(grid: TorusGrid) -> PeriodicFlow:
    comps = [np.zeros(grid.shape) for _ in range(grid.dim)]
    return PeriodicFlow(grid, comps, 1.0, KIND_ZERO, name="zero")


def from_stream_function(h: ScalarField) -> PeriodicFlow:
    """Flow u = (-dH/dx2, dH/dx1) from a periodic 2D stream function sample."""
    grid = h.grid
    if not isinstance(grid, TorusGrid) or grid.dim != 2:
        raise ValueError("stream function must live on a 2D torus")
    if not np.all(np.isfinite(h.values)):
        raise ValueError("stream function has non-finite values")
    dh = gradient(h)
    return PeriodicFlow(grid, [-dh[1].values, dh[0].values], 1.0, KIND_GENERIC,
                        stream_profile=h.values.copy(), name="stream")


def make_shear(shear: ShearProfile, dim: int | None = None) -> PeriodicFlow:
    """Shear flow: the profile rides along `direction`, constant in it."""
    cross = shear.profile.grid
    if not isinstance(cross, TorusGrid):
        raise ValueError("shear profile must live on a torus")
    d = cross.dim + 1 if dim is None else dim
    if cross.dim != d - 1:
        raise ValueError(f"profile dimension {cross.dim} does not match flow dimension {d}")
    grid = TorusGrid(d, cross.n_per_dim)
    axis = shear.direction
    prof = shear.profile.values
    comp = np.broadcast_to(
        np.expand_dims(prof, axis=axis), grid.shape
    ).copy()
    comps = [comp if i == axis else np.zeros(grid.shape) for i in range(d)]
    stream = None
    if d == 2 and axis == 0:
        # u = (v(x2), 0) = grad^perp H with H = -antiderivative of v
        sf = ScalarField(grid, comps[0])
        stream = -_antiderivative_axis(sf, axis=1).values
    return PeriodicFlow(grid, comps, 1.0, KIND_SHEAR, stream_profile=stream,
                        shear_profile=prof.copy(), shear_axis=axis, name="shear")


def _antiderivative_axis(f: ScalarField, axis: int) -> ScalarField:
    """Zero-mean spectral antiderivative along one axis (input mean-zero there)."""
    grid = f.grid
    n = grid.n_per_dim
    vhat = np.fft.fft(f.values, axis=axis)
    k = TWO_PI * np.fft.fftfreq(n, d=grid.spacing)
    k[0] = 1.0
    shape = [1] * f.values.ndim
    shape[axis] = n
    vhat /= 1j * k.reshape(shape)
    idx = [slice(None)] * f.values.ndim
    idx[axis] = 0
    vhat[tuple(idx)] = 0.0
    return ScalarField(grid, np.real(np.fft.ifft(vhat, axis=axis)))


def _radial_bump(r: np.ndarray) -> np.ndarray:
    """C2 bump: 1 on [0, 1/2], (1 - (2r - 1)^2)^2 on [1/2, 1], 0 beyond."""
    out = np.zeros_like(r)
    out[r <= 0.5] = 1.0
    mid = (r > 0.5) & (r < 1.0)
    t = 2.0 * r[mid] - 1.0
    out[mid] = (1.0 - t ** 2) ** 2
    return out


def make_counterexample(R: float, n: int) -> CounterexampleFlow:
    """Profile pair chi_R, u_R = chi_R - 1 on T^2 with unit-mass bumps of radius R."""
    grid = TorusGrid(2, n)
    if not (4.0 / n <= R <= 0.25):
        raise ValueError(f"R={R} not resolvable on n={n} (need 4/n <= R <= 1/4)")
    x, y = grid.meshgrid()
    r = np.sqrt(x ** 2 + y ** 2)
    raw = _radial_bump(r / R)
    chi = raw / integrate(ScalarField(grid, raw))
    chi_f = ScalarField(grid, chi)
    u_f = ScalarField(grid, chi - 1.0)
    return CounterexampleFlow(R, chi_f, u_f)


def scale(flow: PeriodicFlow, a: float) -> PeriodicFlow:
    """Multiply all components by a (amplitude bookkeeping, profiles shared)."""
    return PeriodicFlow(
        grid=flow.grid,
        profile_components=flow.profile_components,
        amplitude=flow.amplitude * a,
        kind=flow.kind,
        stream_profile=flow.stream_profile,
        shear_profile=flow.shear_profile,
        shear_axis=flow.shear_axis,
        name=flow.name,
    )


def swap_axes(flow: PeriodicFlow) -> PeriodicFlow:
    """Reflect a 2D flow across the diagonal: new u(x) = S u(Sx), S=(x2,x1).

    Front measurements along e2 reduce to measurements along e1 of the
    swapped flow.
    """
    if flow.dim != 2:
        raise ValueError("swap_axes handles 2D flows only")
    c0, c1 = flow.profile_components
    comps = [c1.T.copy(), c0.T.copy()]
    stream = None if flow.stream_profile is None else -flow.stream_profile.T.copy()
    kind = flow.kind if flow.kind in (KIND_ZERO, KIND_GENERIC) else KIND_GENERIC
    return PeriodicFlow(flow.grid, comps, flow.amplitude, kind,
                        stream_profile=stream, name=flow.name + "-swapped")


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate(flow: PeriodicFlow) -> FlowDiagnostics:
    """Divergence, mean, sup-norm, Lipschitz diagnostics with pass/fail gates.

    Gates are relative to max(1, sup-norm) so that rescaled flows are judged
    on the same footing as their amplitude-1 profiles.
    """
    comps = flow.components
    div = divergence(comps)
    max_div = float(np.max(np.abs(div.values)))
    means = [mean(c) for c in comps]
    sup = flow.sup_norm()
    lip = abs(flow.amplitude) * flow.profile_lipschitz()
    ref = max(1.0, sup)
    passes = max_div <= 1e-8 * ref and all(abs(m) <= 1e-12 * ref for m in means)
    return FlowDiagnostics(max_div, means, sup, lip, passes)


def require_valid(flow: PeriodicFlow) -> FlowDiagnostics:
    diag = validate(flow)
    if not diag.passes:
        raise ValueError(
            f"flow fails validation: max|div|={diag.max_abs_divergence:g}, "
            f"means={diag.component_means}"
        )
    return diag


# ---------------------------------------------------------------------------
# point evaluation (off-grid, used by the SDE sampler and the integrator)
# ---------------------------------------------------------------------------

def stream_values_at(flow: PeriodicFlow, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Stream function sampled on the tensor grid xs x ys (2D flows).

    Closed forms are used when the flow family has one; otherwise the
    band-limited Fourier series of the stored stream profile is evaluated
    exactly at the requested points.
    """
    if flow.dim != 2:
        raise ValueError("stream function evaluation is 2D only")
    a = flow.amplitude
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if flow.kind == KIND_ZERO:
        return np.zeros((xs.size, ys.size))
    if flow.kind == KIND_CELLULAR:
        return a * np.outer(np.sin(TWO_PI * xs), np.sin(TWO_PI * ys))
    if flow.kind == KIND_ROTATED:
        return a * (np.cos(TWO_PI * xs)[:, None] - np.cos(TWO_PI * ys)[None, :])
    h = flow.stream_profile
    if h is None:
        h = _stream_from_components(flow)
    return a * _fourier_eval_2d(h, flow.grid, xs, ys)


def _stream_from_components(flow: PeriodicFlow) -> np.ndarray:
    """Recover H from u = grad^perp H spectrally (2D incompressible flows)."""
    grid = flow.grid
    u1 = ScalarField(grid, flow.profile_components[0])
    u2 = ScalarField(grid, flow.profile_components[1])
    vort = divergence([ScalarField(grid, -u2.values), u1])  # d1 u2 - d2 u1, negated
    return inverse_laplacian(ScalarField(grid, vort.values)).values


def _fourier_eval_2d(values: np.ndarray, grid: TorusGrid, xs, ys) -> np.ndarray:
    n = grid.n_per_dim
    vhat = np.fft.fft2(values) / n ** 2
    # the unbalanced Nyquist row/column cannot be interpolated consistently
    vhat[n // 2, :] = 0.0
    vhat[:, n // 2] = 0.0
    k = np.fft.fftfreq(n, d=1.0 / n)
    ex = np.exp(2j * np.pi * np.outer(xs + 0.5, k))
    ey = np.exp(2j * np.pi * np.outer(k, ys + 0.5))
    return np.real(ex @ vhat @ ey)


def flow_on_grid(flow: PeriodicFlow, n: int) -> PeriodicFlow:
    """The same flow sampled at resolution n (closed form or spectral resample)."""
    from .grids import spectral_resample

    if n == flow.grid.n_per_dim:
        return flow
    if flow.kind == KIND_CELLULAR:
        return scale(make_cellular(TorusGrid(2, n)), flow.amplitude)
    if flow.kind == KIND_ROTATED:
        return scale(make_rotated_cellular(TorusGrid(2, n)), flow.amplitude)
    if flow.kind == KIND_ZERO:
        return scale(make_zero(TorusGrid(flow.dim, n)), flow.amplitude)
    if flow.kind == KIND_SHEAR:
        cross_old = TorusGrid(flow.dim - 1, flow.grid.n_per_dim)
        prof = spectral_resample(ScalarField(cross_old, flow.shear_profile), n)
        out = make_shear(ShearProfile(prof, flow.shear_axis), dim=flow.dim)
        return scale(out, flow.amplitude)
    comps = [
        spectral_resample(ScalarField(flow.grid, c), n).values
        for c in flow.profile_components
    ]
    stream = None
    if flow.stream_profile is not None:
        stream = spectral_resample(ScalarField(flow.grid, flow.stream_profile), n).values
    out = PeriodicFlow(TorusGrid(flow.dim, n), comps, flow.amplitude, flow.kind,
                       stream_profile=stream, name=flow.name)
    return out


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

def flow_from_name(spec: str, n: int) -> PeriodicFlow:
    """Build a flow from a catalog name.

    Understood names: zero; cellular; rotated-cellular; shear:sin;
    shear:custom=<field file>; counterexample:R=<val> (returns the u_R shear
    profile as a 3D shear flow); stream:file=<field file>.
    """
    grid2 = TorusGrid(2, n)
    if spec == "zero":
        return make_zero(grid2)
    if spec == "cellular":
        return make_cellular(grid2)
    if spec == "rotated-cellular":
        return make_rotated_cellular(grid2)
    if spec == "shear:sin":
        cross = TorusGrid(1, n)
        prof = field_from_function(cross, lambda y: np.sin(TWO_PI * y))
        return make_shear(ShearProfile(prof))
    if spec.startswith("shear:custom="):
        prof = load_field(spec.split("=", 1)[1])
        return make_shear(ShearProfile(prof))
    if spec.startswith("counterexample:R="):
        R = float(spec.split("=", 1)[1])
        ce = make_counterexample(R, n)
        return make_shear(ShearProfile(ce.u_R), dim=3)
    if spec.startswith("stream:file="):
        h = load_field(spec.split("=", 1)[1])
        return from_stream_function(h)
    raise ValueError(f"unknown flow name: {spec!r}")
