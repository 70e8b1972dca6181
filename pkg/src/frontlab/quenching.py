"""Quench/propagate classification on the cylinder R x T, and L^4 threshold fits.

A run starts from the smoothed indicator of [-L, L] x T with zero-flux ends.
Quenched: sup T falls below the ignition temperature (final by the maximum
principle; confirmed by one extra time unit of monotone decay).  Propagated:
the 1/2-level set advances beyond |x1| = L + 5 while sup T stays above
(1+theta)/2.  Runs are driven in short segments so verdicts exit early.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evolve import EvolveConfig, evolve
from .flows import PeriodicFlow, scale
from .grids import ScalarField, StripGrid, TorusGrid
from .reactions import ReactionFunction

QUENCH_ADVANCE = 5.0
EDGE_BUFFER = 12.0
CONFIRM_TIME = 1.0


class QuenchSetupError(ValueError):
    pass


class BoundaryContaminationError(RuntimeError):
    pass


@dataclass
class QuenchOutcome:
    verdict: str  # "quenched" | "propagated" | "undecided"
    decision_time: float
    sup_history: tuple  # (t, sup) arrays
    L: float
    amplitude: float
    edge_max: float = 0.0  # largest boundary value seen before the decision


@dataclass
class ThresholdResult:
    L: float
    A_star: float
    bracket: tuple
    ladder: list  # [(A, verdict), ...]
    open_ended: bool = False
    outcomes: list = field(default_factory=list)  # full QuenchOutcome records


def default_gamma_gate(theta: float) -> float:
    return 0.5 * theta


def _initial_data(grid: StripGrid, L: float) -> ScalarField:
    h = grid.spacing_x
    x = grid.x_axis()[:, None]
    ramp = np.clip((L - np.abs(x)) / (2.0 * h), 0.0, 1.0)
    return ScalarField(grid, ramp * np.ones((1, grid.cross_section.shape[0])))


def _level_extent(xs, bar, level):
    """Largest |x| of the level set of the cross-section average."""
    above = bar >= level
    if not above.any():
        return 0.0
    idx = np.nonzero(above)[0]
    return max(abs(xs[idx[0]]), abs(xs[idx[-1]]))


def run_cauchy(flow: PeriodicFlow | None, reaction: ReactionFunction,
               L: float, A: float, horizon: float = 40.0,
               n_cross: int = 32, gamma_gate: float | None = None,
               segment: float = 0.5, edge_tol: float | None = None) -> QuenchOutcome:
    """Classify the Cauchy evolution from the smoothed indicator of [-L, L].

    Zero-flux ends reflect mass, so the truncated solution dominates the
    cylinder solution pointwise: a quenched verdict is therefore conservative
    no matter what reaches the ends.  A propagated verdict is about the
    interior level set; the run aborts only if an end gets hot enough to
    compromise it (edge_tol, default the propagation sup-level (1+theta)/2),
    and the largest boundary value seen is reported on the outcome.
    """
    if reaction.kind != "ignition" or reaction.theta <= 0:
        raise QuenchSetupError("quenching runs need an ignition reaction")
    theta = reaction.theta
    if edge_tol is None:
        edge_tol = 0.5 * (1.0 + theta)
    gate = default_gamma_gate(theta) if gamma_gate is None else gamma_gate
    if reaction.sup_f_over_s > gate * (1 + 1e-12):
        raise QuenchSetupError(
            f"sup f(s)/s = {reaction.sup_f_over_s:.4g} exceeds the gate "
            f"{gate:.4g}; weaken the reaction or raise the gate")

    h = 1.0 / n_cross
    half = L + QUENCH_ADVANCE + EDGE_BUFFER
    n_x = 2 * int(math.ceil(half / h)) + 1
    grid = StripGrid(length_x=(n_x - 1) * h, n_x=n_x,
                     cross_section=TorusGrid(1, n_cross),
                     x0=-0.5 * (n_x - 1) * h)
    state = _initial_data(grid, L)
    fa = None if flow is None or A == 0.0 else scale(flow, A / flow.amplitude)

    xs = grid.x_axis()
    ts, sups = [0.0], [float(state.values.max())]
    t = 0.0
    quench_t = None
    edge_seen = 0.0
    verdict, decision = "undecided", float("nan")
    while t < horizon + (CONFIRM_TIME if quench_t is not None else 0.0):
        seg = min(segment, horizon - t) if quench_t is None else segment
        seg = max(seg, 1e-9)
        cfg = EvolveConfig(t_end=seg, bc_kind="neumann", dt_max=0.01,
                           series_dt=seg)
        res = evolve(state, fa, reaction, cfg)
        state = res.final
        t += seg
        sup = float(state.values.max())
        ts.append(t)
        sups.append(sup)
        edge = max(float(state.values[:2].max()), float(state.values[-2:].max()))
        edge_seen = max(edge_seen, edge)
        if edge > edge_tol:
            raise BoundaryContaminationError(
                f"boundary value {edge:.2e} exceeds {edge_tol:g} at t={t:.2f}")
        if quench_t is None:
            if sup < theta:
                quench_t = t
            else:
                bar = state.values.mean(axis=1)
                if sup >= 0.5 * (1.0 + theta) and \
                        _level_extent(xs, bar, 0.5) > L + QUENCH_ADVANCE:
                    verdict, decision = "propagated", t
                    break
        else:
            # linear regime: sup must keep decaying for one confirm unit
            if sup > sups[-2] * (1 + 1e-9):
                quench_t = None  # not monotone; keep watching
            elif t >= quench_t + CONFIRM_TIME:
                verdict, decision = "quenched", quench_t
                break
    return QuenchOutcome(verdict, decision, (np.asarray(ts), np.asarray(sups)),
                         L, A, edge_max=edge_seen)


def quench_threshold(flow: PeriodicFlow, reaction: ReactionFunction, L: float,
                     A_ladder, horizon: float = 40.0, n_cross: int = 32,
                     confirm_factor: float = 2.0,
                     gamma_gate: float | None = None) -> ThresholdResult:
    """Smallest ladder amplitude that quenches, confirmed at confirm_factor*A.

    The flow must be a symmetric cellular flow (stream function odd in x1).
    A run at A=0 comes first: if the data quenches without the flow, the
    threshold is 0.  No quenched member within the ladder gives an open-ended
    result.
    """
    _require_symmetric_cellular(flow)
    ladder = [float(a) for a in A_ladder]
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("amplitude ladder must be strictly increasing")
    ladder_entries = []
    records = []

    def member(a, hz):
        out = run_cauchy(flow, reaction, L, a, horizon=hz,
                         n_cross=n_cross, gamma_gate=gamma_gate)
        ladder_entries.append((a, out.verdict))
        records.append(out)
        return out

    base = member(0.0, 2 * horizon)
    if base.verdict == "quenched":
        return ThresholdResult(L, 0.0, (0.0, 0.0), ladder_entries,
                               outcomes=records)
    last_not_quenched = 0.0
    for a in ladder:
        out = member(a, horizon)
        if out.verdict == "quenched":
            conf = member(confirm_factor * a, horizon)
            if conf.verdict == "quenched":
                return ThresholdResult(L, a, (last_not_quenched, a),
                                       ladder_entries, outcomes=records)
        else:
            last_not_quenched = a
    return ThresholdResult(L, math.inf, (last_not_quenched, math.inf),
                           ladder_entries, open_ended=True, outcomes=records)


def _require_symmetric_cellular(flow: PeriodicFlow):
    h = flow.stream_profile
    if h is None:
        raise QuenchSetupError("threshold scans need a stream-function flow")
    # odd in x1: x -> -x maps node k of {-1/2 + k/n} to node (n - k) mod n
    odd = np.roll(h, -1, axis=0)[::-1, :]
    if np.max(np.abs(h + odd)) > 1e-10 * max(1.0, np.max(np.abs(h))):
        raise QuenchSetupError("stream function is not odd in x1 "
                               "(symmetric cellular flow required)")


@dataclass
class ScalingFit:
    exponent: float
    constant: float
    L_values: list
    A_values: list


def quench_scaling_fit(results) -> ScalingFit:
    """Log-log least squares of A_star against L over >= 4 thresholds."""
    pts = [(r.L, r.A_star) for r in results
           if np.isfinite(r.A_star) and r.A_star > 0]
    if len({p[0] for p in pts}) < 4:
        raise ValueError("need at least 4 distinct L values with finite thresholds")
    logs = np.log([p[0] for p in pts])
    loga = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(logs, loga, 1)
    return ScalingFit(float(slope), float(np.exp(intercept)),
                      [p[0] for p in pts], [p[1] for p in pts])
