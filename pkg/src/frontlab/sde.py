"""Euler-Maruyama path simulation dX = sqrt(2) dB - u(X) dt, with estimators.

Randomness: the master seed spawns one child stream per path (counter-based
Philox), so ensembles are bit-reproducible for a fixed seed no matter how the
paths are chunked or scheduled.  Off-grid flow evaluation uses the closed
form when the family has one, else periodic bicubic splines of the cached
components.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from scipy import ndimage, stats

from . import cell_problem
from .flows import (KIND_CELLULAR, KIND_ROTATED, KIND_SHEAR, KIND_ZERO,
                    PeriodicFlow)
from .grids import TorusGrid

TWO_PI = 2.0 * np.pi
DT_GATE = 0.1
MIN_ESTIMATOR_PATHS = 1000
_CHUNK_BYTES = 2.5e8

_K_ZERO, _K_CELL, _K_ROT, _K_SHEAR, _K_GENERIC = 0, 1, 2, 3, 4
_EMPTY_1D = np.zeros(1)
_EMPTY_2D = np.zeros((1, 1))


@dataclass
class PathEnsemble:
    n_paths: int
    dt: float
    t_end: float
    seed: int
    start_points: np.ndarray  # (n_paths, dim)
    record_times: np.ndarray  # sorted, last == t_end
    records: np.ndarray  # (n_times, n_paths, dim)

    @property
    def endpoints(self) -> np.ndarray:
        return self.records[-1]


@dataclass
class DiffusivityEstimate:
    value: float
    std_error: float
    t_end: float
    short_time_flag: bool = False


def gated_dt(flow: PeriodicFlow | None, dt_max: float = 0.01) -> float:
    """Largest dt with dt * amplitude * Lip(profile) <= the gate."""
    if flow is None or flow.kind == KIND_ZERO or flow.amplitude == 0.0:
        return dt_max
    lip = abs(flow.amplitude) * flow.profile_lipschitz()
    return min(dt_max, DT_GATE / max(lip, 1e-300))


def _flow_kernel_data(flow: PeriodicFlow | None):
    if flow is None or flow.kind == KIND_ZERO or flow.amplitude == 0.0:
        return _K_ZERO, 0.0, _EMPTY_1D, _EMPTY_2D, _EMPTY_2D, 1
    a = float(flow.amplitude)
    if flow.kind == KIND_CELLULAR:
        return _K_CELL, a, _EMPTY_1D, _EMPTY_2D, _EMPTY_2D, 1
    if flow.kind == KIND_ROTATED:
        return _K_ROT, a, _EMPTY_1D, _EMPTY_2D, _EMPTY_2D, 1
    if flow.kind == KIND_SHEAR and flow.shear_axis == 0 and flow.dim == 2:
        coef = ndimage.spline_filter(flow.shear_profile, order=3, mode="grid-wrap")
        return _K_SHEAR, a, np.ascontiguousarray(coef), _EMPTY_2D, _EMPTY_2D, \
            flow.grid.n_per_dim
    if flow.dim != 2:
        raise NotImplementedError("path simulation is implemented for 2D flows")
    c1 = ndimage.spline_filter(flow.profile_components[0], order=3, mode="grid-wrap")
    c2 = ndimage.spline_filter(flow.profile_components[1], order=3, mode="grid-wrap")
    return _K_GENERIC, a, _EMPTY_1D, np.ascontiguousarray(c1), \
        np.ascontiguousarray(c2), flow.grid.n_per_dim


@njit(cache=True, inline="always")
def _bspline_weights(t):
    t2 = t * t
    t3 = t2 * t
    w0 = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0
    w1 = (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0
    w2 = (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0
    w3 = t3 / 6.0
    return w0, w1, w2, w3


@njit(cache=True, inline="always")
def _spline1d(coef, n, pos):
    # pos in grid-index units, periodic
    pos = pos % n
    i = int(math.floor(pos))
    t = pos - i
    w0, w1, w2, w3 = _bspline_weights(t)
    i0 = (i - 1) % n
    i1 = i % n
    i2 = (i + 1) % n
    i3 = (i + 2) % n
    return w0 * coef[i0] + w1 * coef[i1] + w2 * coef[i2] + w3 * coef[i3]


@njit(cache=True, inline="always")
def _spline2d(coef, n, px, py):
    px = px % n
    py = py % n
    i = int(math.floor(px))
    j = int(math.floor(py))
    tx = px - i
    ty = py - j
    wx0, wx1, wx2, wx3 = _bspline_weights(tx)
    wy0, wy1, wy2, wy3 = _bspline_weights(ty)
    total = 0.0
    for a in range(4):
        ia = (i - 1 + a) % n
        if a == 0:
            wx = wx0
        elif a == 1:
            wx = wx1
        elif a == 2:
            wx = wx2
        else:
            wx = wx3
        row = coef[ia]
        acc = wy0 * row[(j - 1) % n] + wy1 * row[j % n] + \
            wy2 * row[(j + 1) % n] + wy3 * row[(j + 2) % n]
        total += wx * acc
    return total


@njit(cache=True, inline="always")
def _velocity(kind, amp, prof1d, c1, c2, n, x, y):
    if kind == 0:
        return 0.0, 0.0
    if kind == 1:
        sx = math.sin(TWO_PI * x)
        cx = math.cos(TWO_PI * x)
        sy = math.sin(TWO_PI * y)
        cy = math.cos(TWO_PI * y)
        return -TWO_PI * amp * sx * cy, TWO_PI * amp * cx * sy
    if kind == 2:
        return TWO_PI * amp * math.sin(TWO_PI * y), -TWO_PI * amp * math.sin(TWO_PI * x)
    if kind == 3:
        # grid origin is -1/2, index units are 1/n
        return amp * _spline1d(prof1d, n, (y + 0.5) * n), 0.0
    px = (x + 0.5) * n
    py = (y + 0.5) * n
    return amp * _spline2d(c1, n, px, py), amp * _spline2d(c2, n, px, py)


@njit(cache=True, parallel=True)
def _em_chunk(pos, inc, dt, kind, amp, prof1d, c1, c2, n,
              rec_steps, records):
    """Advance all paths in the chunk; record positions after listed steps."""
    n_paths = pos.shape[0]
    n_steps = inc.shape[1]
    sq = math.sqrt(2.0 * dt)
    n_rec = rec_steps.shape[0]
    for p in prange(n_paths):
        x = pos[p, 0]
        y = pos[p, 1]
        r = 0
        for s in range(n_steps):
            u1, u2 = _velocity(kind, amp, prof1d, c1, c2, n, x, y)
            x += sq * inc[p, s, 0] - u1 * dt
            y += sq * inc[p, s, 1] - u2 * dt
            while r < n_rec and rec_steps[r] == s + 1:
                records[r, p, 0] = x
                records[r, p, 1] = y
                r += 1
        pos[p, 0] = x
        pos[p, 1] = y


def simulate_paths(flow: PeriodicFlow | None, start, t_end: float, dt: float,
                   n_paths: int, seed: int,
                   record_times=None) -> PathEnsemble:
    """Euler-Maruyama ensemble with per-path counter-based substreams.

    `start` is a point (tuple/array) or the string "uniform" for
    torus-uniform starts.  Results are bit-identical for a fixed seed
    regardless of path chunking.
    """
    gate = gated_dt(flow, dt_max=np.inf)
    if dt > gate * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} violates the SDE gate dt*A*Lip(u) <= {DT_GATE}"
                         f" (need dt <= {gate:g})")
    n_steps = max(1, int(math.ceil(t_end / dt - 1e-9)))
    dt = t_end / n_steps  # 0 when t_end is 0: paths stay put
    if record_times is None:
        record_times = [t_end]
    record_times = sorted(float(t) for t in record_times)
    rec_steps = np.array(
        [min(n_steps, max(1, int(round(t / dt)))) if dt > 0 else n_steps
         for t in record_times],
        dtype=np.int64)
    rec_actual = rec_steps * dt

    kind, amp, prof1d, c1, c2, n = _flow_kernel_data(flow)

    ss = np.random.SeedSequence(seed)
    children = ss.spawn(n_paths + 1)
    if isinstance(start, str) and start == "uniform":
        rng0 = np.random.Generator(np.random.Philox(children[-1]))
        starts = rng0.uniform(-0.5, 0.5, size=(n_paths, 2))
    else:
        starts = np.tile(np.asarray(start, dtype=float), (n_paths, 1))

    records = np.empty((len(rec_steps), n_paths, 2))
    chunk = max(8, min(n_paths, int(_CHUNK_BYTES / (n_steps * 16 + 1))))
    for p0 in range(0, n_paths, chunk):
        p1 = min(n_paths, p0 + chunk)
        inc = np.empty((p1 - p0, n_steps, 2))
        for i, p in enumerate(range(p0, p1)):
            rng = np.random.Generator(np.random.Philox(children[p]))
            inc[i] = rng.standard_normal((n_steps, 2))
        pos = starts[p0:p1].copy()
        _em_chunk(pos, inc, dt, kind, amp, prof1d, c1, c2, n,
                  rec_steps, records[:, p0:p1, :])
    return PathEnsemble(n_paths, dt, n_steps * dt, seed, starts,
                        np.asarray(rec_actual), records)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def _jackknife_se(values: np.ndarray) -> float:
    n = values.size
    total = values.sum()
    loo = (total - values) / (n - 1)
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def mc_diffusivity(ensemble: PathEnsemble, e) -> DiffusivityEstimate:
    """Sample mean of |(X_t - x).e|^2 / (2t) with jackknife standard error."""
    if ensemble.n_paths < MIN_ESTIMATOR_PATHS:
        raise ValueError(f"need at least {MIN_ESTIMATOR_PATHS} paths")
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    t = float(ensemble.record_times[-1])
    flag = t < 20.0
    if flag:
        warnings.warn(f"t_end={t:g} is short for homogenization (< 20)",
                      stacklevel=2)
    disp = (ensemble.endpoints - ensemble.start_points) @ e
    vals = disp ** 2 / (2.0 * t)
    return DiffusivityEstimate(float(vals.mean()), _jackknife_se(vals), t, flag)


@dataclass
class FeynmanKacReport:
    probes: np.ndarray
    mc_values: np.ndarray
    mc_errors: np.ndarray
    pde_values: np.ndarray
    slack: float
    passed: bool


def feynman_kac_check(flow, psi0, t: float, n_paths: int, seed: int,
                      grid_n: int = 64, probe_grid: int = 3,
                      slack: float = 1e-3, dt: float | None = None) -> FeynmanKacReport:
    """E psi0(X_t^x) versus the integrator's solution at probe points.

    psi0 is a vectorized callable on torus coordinates; the PDE side is run
    on an n x n torus grid and the probes sit on grid nodes.
    """
    from .evolve import EvolveConfig, evolve
    from .grids import field_from_function

    grid = TorusGrid(2, grid_n)
    psi_field = field_from_function(grid, psi0)
    if t > 0:
        cfg = EvolveConfig(t_end=t, dt_max=0.002, series_dt=t)
        pde = evolve(psi_field, flow, None, cfg).final
    else:
        pde = psi_field

    if dt is None:
        dt = gated_dt(flow, dt_max=0.005)
    idx = [int(round((k + 0.5) * grid_n / probe_grid)) % grid_n
           for k in range(probe_grid)]
    axis = grid.axis()
    probes = np.array([(axis[i], axis[j]) for i in idx for j in idx])
    mc_vals = np.empty(len(probes))
    mc_errs = np.empty(len(probes))
    pde_vals = np.empty(len(probes))
    for k, (px, py) in enumerate(probes):
        ens = simulate_paths(flow, (px, py), t, dt, n_paths, seed + k)
        wrapped_x = (ens.endpoints[:, 0] + 0.5) % 1.0 - 0.5
        wrapped_y = (ens.endpoints[:, 1] + 0.5) % 1.0 - 0.5
        vals = np.asarray(psi0(wrapped_x, wrapped_y), dtype=float)
        mc_vals[k] = vals.mean()
        mc_errs[k] = vals.std(ddof=1) / math.sqrt(n_paths)
        i, j = int(round((px + 0.5) * grid_n)) % grid_n, int(round((py + 0.5) * grid_n)) % grid_n
        pde_vals[k] = pde.values[i, j]
    passed = bool(np.all(np.abs(mc_vals - pde_vals) <= 3 * mc_errs + slack))
    return FeynmanKacReport(probes, mc_vals, mc_errs, pde_vals, slack, passed)


@dataclass
class SpreadResult:
    best_x: tuple
    best_t: float
    probability: float
    threshold: float
    table: np.ndarray  # (n_probes, n_times)


def short_time_spread(flow, e, tau: float, alpha: float, probe_grid: int = 3,
                      n_paths: int = 2000, seed: int = 0,
                      d_eff: float | None = None,
                      dt: float | None = None) -> SpreadResult:
    """Maximize P(|(X_t-x).e| >= alpha sqrt(tau D_e)) over probes and a t-ladder."""
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    if d_eff is None:
        if flow is None or flow.kind == KIND_ZERO or flow.amplitude == 0.0:
            d_eff = 1.0
        else:
            nres = min(cell_problem.minimum_resolution(flow), 512)
            d_eff = cell_problem.solve_cell_problem(
                flow, e, TorusGrid(2, nres), tol=1e-8).d_eff
    threshold = alpha * math.sqrt(tau * d_eff)
    ladder = [tau / 8, tau / 4, tau / 2, tau]
    if dt is None:
        dt = gated_dt(flow, dt_max=min(0.005, tau / 16))
    offsets = [(k + 0.5) / probe_grid - 0.5 for k in range(probe_grid)]
    probes = [(x, y) for x in offsets for y in offsets]
    table = np.empty((len(probes), len(ladder)))
    for k, (px, py) in enumerate(probes):
        ens = simulate_paths(flow, (px, py), tau, dt, n_paths, seed + k,
                             record_times=ladder)
        disp = (ens.records - ens.start_points[None, :, :]) @ e
        table[k] = (np.abs(disp) >= threshold).mean(axis=1)
    k_best, t_best = np.unravel_index(np.argmax(table), table.shape)
    return SpreadResult(probes[k_best], ladder[t_best], float(table.max()),
                        threshold, table)


@dataclass
class IncrementStatsReport:
    mean_displacement: np.ndarray  # (2, dim): t=1 and t=2
    mean_se: np.ndarray
    ks_statistic: float
    ks_pvalue: float
    mean_ok: bool
    ks_ok: bool


def torus_increment_stats(flow, n_paths: int = 4000, seed: int = 0, e=(1.0, 0.0),
                          dt: float | None = None,
                          ks_level: float = 0.01) -> IncrementStatsReport:
    """Zero averaged displacement from uniform starts, and stationarity of
    projected increments over [0,1] vs [1,2] (two-sample KS at the 1% level)."""
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    if dt is None:
        dt = gated_dt(flow, dt_max=0.005)
    ens = simulate_paths(flow, "uniform", 2.0, dt, n_paths, seed,
                         record_times=[1.0, 2.0])
    d1 = ens.records[0] - ens.start_points
    d2 = ens.records[1] - ens.start_points
    means = np.stack([d1.mean(axis=0), d2.mean(axis=0)])
    ses = np.stack([d1.std(axis=0, ddof=1), d2.std(axis=0, ddof=1)]) / math.sqrt(n_paths)
    mean_ok = bool(np.all(np.abs(means) <= 3 * ses))
    z1 = d1 @ e
    z2 = (ens.records[1] - ens.records[0]) @ e
    ks = stats.ks_2samp(z1, z2)
    return IncrementStatsReport(means, ses, float(ks.statistic), float(ks.pvalue),
                                mean_ok, bool(ks.pvalue > ks_level))
