"""Pulsating-front speed measurement on strips, and front-shape diagnostics.

The speed protocol: evolve front-like data (1 behind, smooth drop to 0 ahead)
on an auto-sized strip, track the largest x where the cross-section average
crosses 1/2, discard the first half of the run as transient, and fit the
position by least squares.  An estimate is accepted only when the fit is
clean (r^2 >= 0.999) and the slope over the last third agrees with the fitted
slope to 1%.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import cell_problem
from .evolve import EvolveConfig, EvolveResult, evolve
from .flows import KIND_SHEAR, KIND_ZERO, PeriodicFlow, scale, swap_axes
from .grids import ScalarField, StripGrid, TorusGrid, gradient
from .reactions import ReactionFunction


class FrontMeasurementError(RuntimeError):
    pass


class FrontSweepError(FrontMeasurementError):
    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


@dataclass
class FrontSpeedEstimate:
    speed: float
    fit_window: tuple
    fit_rsquared: float
    resolution: tuple  # (n_cross, h_x, dt)
    front_positions: tuple  # (t, x) arrays
    accepted: bool
    window_agreement: float
    overshoot: float = 0.0
    run: object = None

    def require_accepted(self):
        if not self.accepted:
            raise FrontMeasurementError(
                f"front estimate not accepted: r2={self.fit_rsquared:.6f}, "
                f"window agreement {self.window_agreement:.3%}")
        return self


@dataclass
class FrontWidthReport:
    zeta: float
    xi: float
    epsilon: float
    margin: float
    max_component_diameter_ahead: float
    max_component_diameter_behind: float


@dataclass
class FrontRunConfig:
    """Resolution and horizon policy for a single front measurement.

    The horizon is travel_cells / expected_speed but at least t_min; the
    first half of the run is transient, the second half carries the fit and
    (when snapshots are on) the integral-identity window, so t_min must cover
    twice the behind-the-front relaxation time of the reaction.
    """

    n_cross: int = 32
    h_x: float | None = None  # None: h_cross, coarser for x-invariant flows
    t_end: float | None = None  # None: sized from the expected speed
    travel_cells: float = 35.0
    t_min: float = 14.0
    front_start: float = 2.0
    pad: float = 4.0
    sizing_factor: float = 1.15
    drop_width: float = 0.5
    snapshots_per_cell: int = 0  # >0: record snapshots for integral checks
    dt_max: float = 0.01
    cfl: float = 0.5


@dataclass
class SpeedSweepResult:
    amplitudes: list
    speeds: list
    estimates: list
    exponent: float | None = None
    failed_amplitude: float | None = None


@dataclass
class BatteryRow:
    label: str
    speed: float
    d_eff: float
    ratio: float
    reaction_integral: float = float("nan")
    dissipation_integral: float = float("nan")


@dataclass
class BatteryResult:
    rows: list
    min_ratio: float
    max_ratio: float


_zero_speed_cache: dict = {}


def zero_flow_speed(reaction: ReactionFunction, h: float = 1.0 / 32,
                    t_end: float | None = None) -> float:
    """Front speed at u = 0 (effectively one-dimensional), cached per reaction."""
    key = (reaction.name, round(h, 9))
    if key in _zero_speed_cache:
        return _zero_speed_cache[key]
    bound = 2.0 * math.sqrt(max(reaction.sup_f_over_s, 1e-12))
    if t_end is None:
        t_end = max(60.0, 25.0 / bound)
    est = estimate_front_speed(
        None, reaction, cfg=FrontRunConfig(n_cross=8, h_x=h, t_end=t_end),
        expected_speed=bound)
    _zero_speed_cache[key] = est.speed
    return est.speed


def _x_invariant(flow) -> bool:
    if flow is None or flow.kind == KIND_ZERO or flow.amplitude == 0.0:
        return True
    return flow.kind == KIND_SHEAR and flow.shear_axis == 0


def _oriented(flow, e):
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    if abs(e[0]) > 0.999:
        return flow
    if flow is not None and flow.dim == 2 and abs(e[-1]) > 0.999:
        return swap_axes(flow) if flow.kind != KIND_ZERO else flow
    raise FrontMeasurementError("front direction must be a lattice unit vector "
                                "aligned with a strip axis")


def estimate_front_speed(flow: PeriodicFlow | None, reaction: ReactionFunction,
                         e=(1.0, 0.0), cfg: FrontRunConfig | None = None,
                         expected_speed: float | None = None,
                         d_eff: float | None = None,
                         keep_result: bool = False) -> FrontSpeedEstimate:
    """Measure the pulsating-front speed for (flow, reaction) along e."""
    cfg = cfg or FrontRunConfig()
    flow = _oriented(flow, e) if flow is not None else None

    if expected_speed is None:
        c0 = zero_flow_speed(reaction)
        if flow is None or flow.kind == KIND_ZERO or flow.amplitude == 0.0:
            expected_speed = c0
        else:
            if d_eff is None:
                n = min(cell_problem.minimum_resolution(flow), 256)
                sol = cell_problem.solve_cell_problem(
                    flow, np.eye(flow.dim)[0], TorusGrid(flow.dim, n), tol=1e-6)
                d_eff = sol.d_eff
            expected_speed = c0 * math.sqrt(d_eff)

    h_cross = 1.0 / cfg.n_cross
    if cfg.h_x is not None:
        h_x = cfg.h_x
    elif _x_invariant(flow):
        h_x = min(0.5, max(h_cross, expected_speed / 40.0))
    else:
        h_x = h_cross
    t_end = cfg.t_end
    if t_end is None:
        t_end = max(cfg.t_min, cfg.travel_cells / expected_speed)

    length = cfg.front_start + cfg.sizing_factor * expected_speed * t_end + cfg.pad
    n_x = int(math.ceil(length / h_x)) + 1
    strip = StripGrid(length_x=(n_x - 1) * h_x, n_x=n_x,
                      cross_section=TorusGrid(1, cfg.n_cross), x0=0.0)

    xs = strip.x_axis()[:, None]
    drop = np.exp(-((xs - cfg.front_start) / cfg.drop_width) ** 2)
    vals = np.where(xs <= cfg.front_start, 1.0, drop) * np.ones((1, cfg.n_cross))
    T0 = ScalarField(strip, vals)

    snapshot_dt = None
    snap_start = None
    if cfg.snapshots_per_cell > 0:
        snapshot_dt = 1.0 / (expected_speed * cfg.snapshots_per_cell)
        snap_start = 0.5 * t_end
    ecfg = EvolveConfig(t_end=t_end, cfl=cfg.cfl, dt_max=cfg.dt_max,
                        bc_kind="dirichlet", bc_left=1.0, bc_right=0.0,
                        series_dt=max(t_end / 400.0, 1e-4),
                        snapshot_dt=snapshot_dt, snapshot_t_start=snap_start,
                        check_domain=True)
    result = evolve(T0, flow, reaction, ecfg)
    est = fit_front_speed(result)
    if keep_result:
        est.run = result
    return est


def fit_front_speed(result: EvolveResult) -> FrontSpeedEstimate:
    """Least-squares speed from tracked front positions (transient discarded)."""
    t, x = result.front_positions()
    good = np.isfinite(x)
    t, x = t[good], x[good]
    if t.size < 8:
        raise FrontMeasurementError("no usable front positions "
                                    "(quenched or not yet developed)")
    t_end = t[-1]
    half = t >= 0.5 * t_end
    third = t >= (2.0 / 3.0) * t_end
    if half.sum() < 4 or third.sum() < 3:
        raise FrontMeasurementError("fit window too short")
    c_half, r2 = _ls_slope(t[half], x[half])
    c_third, _ = _ls_slope(t[third], x[third])
    agreement = abs(c_third - c_half) / abs(c_half) if c_half != 0 else np.inf
    accepted = bool(r2 >= 0.999 and agreement <= 0.01 and c_half > 0)
    grid = result.grid
    est = FrontSpeedEstimate(
        speed=float(c_half),
        fit_window=(float(t[half][0]), float(t_end)),
        fit_rsquared=float(r2),
        resolution=(grid.cross_section.n_per_dim, grid.spacing_x, result.dt),
        front_positions=(t, x),
        accepted=accepted,
        window_agreement=float(agreement),
        overshoot=result.overshoot)
    return est


def _ls_slope(t, x):
    A = np.vstack([t, np.ones_like(t)]).T
    coef, res, _, _ = np.linalg.lstsq(A, x, rcond=None)
    ss_tot = float(np.sum((x - x.mean()) ** 2))
    ss_res = float(res[0]) if res.size else float(np.sum((x - A @ coef) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return float(coef[0]), r2


# ---------------------------------------------------------------------------
# front integral identities (per unit cell, over one full passage)
# ---------------------------------------------------------------------------

def front_integral_checks(result: EvolveResult, reaction: ReactionFunction,
                          speed: float, ahead_margin: float = 2.5,
                          min_behind_time: float = 4.5) -> tuple:
    """Time-and-cell quadrature of f(T) and |grad T|^2 over a front passage.

    Picks a unit-length cell the front enters shortly after the snapshot
    window opens, so the remainder of the window captures the slow relaxation
    of f(T) behind the front (which decays on the reaction time scale, not
    the crossing time scale).  Returns (reaction_integral,
    dissipation_integral); the first should be close to 1 and the second
    below 1/2.
    """
    if len(result.snapshots) < 10:
        raise FrontMeasurementError("not enough snapshots for integral checks")
    times = np.asarray(result.snapshot_times)
    t_series, x_series = result.front_positions()
    # cell starts a safe distance ahead of the front at window opening
    x_open = np.interp(times[0], t_series, x_series)
    cell_lo = x_open + ahead_margin
    grid = result.grid
    xs = grid.x_axis()
    in_cell = (xs >= cell_lo) & (xs < cell_lo + 1.0)
    if in_cell.sum() < 4:
        raise FrontMeasurementError("integration cell lies outside the strip")
    # the front must clear the cell early enough for the behind tail
    cleared = np.isfinite(x_series) & (x_series >= cell_lo + 1.0)
    if not cleared.any():
        raise FrontMeasurementError("front never cleared the integration cell")
    t_cross = float(t_series[cleared][0])
    behind_time = times[-1] - t_cross
    if behind_time < min_behind_time:
        raise FrontMeasurementError(
            f"window leaves only {behind_time:.2f} time units after the "
            f"passage (need {min_behind_time}); front not converged or run too short")
    hx = grid.spacing_x
    hy = grid.cross_section.spacing

    f_t = np.empty(times.size)
    d_t = np.empty(times.size)
    for k, snap in enumerate(result.snapshots):
        vals = snap.values
        f_t[k] = float(np.sum(reaction(vals[in_cell, :])) * hx * hy)
        gx, gy = gradient(snap)
        e2 = gx.values[in_cell, :] ** 2 + gy.values[in_cell, :] ** 2
        d_t[k] = float(np.sum(e2) * hx * hy)
    reaction_integral = float(np.trapezoid(f_t, times))
    dissipation_integral = float(np.trapezoid(d_t, times))
    return reaction_integral, dissipation_integral


# ---------------------------------------------------------------------------
# front width (Theorem-3.1-style component diagnostics)
# ---------------------------------------------------------------------------

def front_width(snapshot: ScalarField, zeta: float, xi: float, epsilon: float,
                front_position: float, margin: float = 2.0) -> FrontWidthReport:
    """Largest connected-set diameters violating the front-shape bounds.

    Ahead zone (x >= front_position + margin): components of {T >= zeta+eps};
    behind zone (x <= front_position - margin): components of {T <= xi-eps}.
    Connectivity is 4-neighbor with the cross direction periodic.
    """
    if not (0.0 < zeta + epsilon < xi - epsilon < 1.0):
        raise ValueError("degenerate thresholds: need 0 < zeta+eps < xi-eps < 1")
    grid = snapshot.grid
    if not isinstance(grid, StripGrid) or grid.cross_section.dim != 1:
        raise ValueError("front_width expects a 2D strip snapshot")
    xs = grid.x_axis()
    ahead = (xs >= front_position + margin)[:, None] & (snapshot.values >= zeta + epsilon)
    behind = (xs <= front_position - margin)[:, None] & (snapshot.values <= xi - epsilon)
    d_ahead = _max_component_diameter(ahead, grid)
    d_behind = _max_component_diameter(behind, grid)
    return FrontWidthReport(zeta, xi, epsilon, margin, d_ahead, d_behind)


def _max_component_diameter(mask: np.ndarray, grid: StripGrid,
                            exact_cap: int = 4000) -> float:
    if not mask.any():
        return 0.0
    labels, n_lab = ndimage.label(mask)
    # merge components across the periodic cross seam
    parent = list(range(n_lab + 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    top, bot = labels[:, 0], labels[:, -1]
    for a, b in zip(top, bot):
        if a and b:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[rb] = ra
    roots = np.array([find(i) for i in range(n_lab + 1)])
    merged = roots[labels]
    hx = grid.spacing_x
    hy = grid.cross_section.spacing
    best = 0.0
    for lab in np.unique(merged):
        if lab == 0:
            continue
        ii, jj = np.nonzero(merged == lab)
        px = ii * hx
        py = jj * hy
        if ii.size > exact_cap:
            ext_x = px.max() - px.min()
            best = max(best, math.hypot(ext_x, 0.5))
            continue
        dx = px[:, None] - px[None, :]
        dy = np.abs(py[:, None] - py[None, :])
        dy = np.minimum(dy, 1.0 - dy)
        best = max(best, float(np.sqrt(dx ** 2 + dy ** 2).max()))
    return best


# ---------------------------------------------------------------------------
# sweeps and the two-sided ratio battery
# ---------------------------------------------------------------------------

def speed_scaling_sweep(flow: PeriodicFlow, reaction: ReactionFunction,
                        amplitudes, cfg: FrontRunConfig | None = None,
                        n_cross_policy=None) -> SpeedSweepResult:
    """Front speed along increasing amplitudes with a log-log exponent fit.

    The exponent is fitted over the upper half of the list; a single
    amplitude returns the speed with no exponent.
    """
    amplitudes = list(amplitudes)
    if any(b <= a for a, b in zip(amplitudes, amplitudes[1:])):
        raise ValueError("amplitude list must be strictly increasing")
    cfg = cfg or FrontRunConfig()
    result = SpeedSweepResult([], [], [])
    for a in amplitudes:
        fa = scale(flow, a / flow.amplitude) if a != flow.amplitude else flow
        run_cfg = cfg
        if n_cross_policy is not None:
            run_cfg = replace_n_cross(cfg, n_cross_policy(a))
        try:
            est = estimate_front_speed(fa, reaction, cfg=run_cfg).require_accepted()
        except (FrontMeasurementError, RuntimeError) as err:
            result.failed_amplitude = a
            result.exponent = cell_problem._fit_upper_half(
                result.amplitudes, result.speeds)
            raise FrontSweepError(f"sweep member A={a} failed: {err}", result) from err
        result.amplitudes.append(a)
        result.speeds.append(est.speed)
        result.estimates.append(est)
    result.exponent = cell_problem._fit_upper_half(result.amplitudes, result.speeds)
    return result


def replace_n_cross(cfg: FrontRunConfig, n_cross: int) -> FrontRunConfig:
    from dataclasses import replace
    return replace(cfg, n_cross=n_cross)


def theorem11_ratio_battery(members, reaction: ReactionFunction,
                            e=(1.0, 0.0), cfg: FrontRunConfig | None = None,
                            with_integrals: bool = True) -> BatteryResult:
    """Pair measured front speeds with cell-problem sqrt(D_e) across flows.

    `members` is a list of (label, flow).  Each 2D front run also evaluates
    the front integral identities when snapshots are requested.
    """
    from dataclasses import replace as dc_replace
    cfg = cfg or FrontRunConfig()
    if with_integrals and cfg.snapshots_per_cell == 0:
        cfg = dc_replace(cfg, snapshots_per_cell=15)
    rows = []
    for label, flow in members:
        if flow is None or flow.kind == KIND_ZERO or flow.amplitude == 0.0:
            d_eff = 1.0
        else:
            n = min(cell_problem.minimum_resolution(flow), 512)
            sol = cell_problem.solve_cell_problem(
                flow, np.eye(flow.dim)[0], TorusGrid(flow.dim, n), tol=1e-8)
            d_eff = sol.d_eff
        est = estimate_front_speed(flow, reaction, e=e, cfg=cfg, d_eff=d_eff,
                                   keep_result=True).require_accepted()
        row = BatteryRow(label, est.speed, d_eff, est.speed / math.sqrt(d_eff))
        if with_integrals:
            try:
                ri, di = front_integral_checks(est.run, reaction, est.speed)
                row.reaction_integral = ri
                row.dissipation_integral = di
            except FrontMeasurementError as err:
                warnings.warn(f"integral checks skipped for {label}: {err}",
                              stacklevel=2)
        rows.append(row)
    ratios = [r.ratio for r in rows]
    return BatteryResult(rows, min(ratios), max(ratios))
