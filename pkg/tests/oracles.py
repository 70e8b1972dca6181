"""Independent oracles used by the tests.

The traveling-wave shooting oracle integrates the wave ODE
    U'' + c U' + f(U) = 0,  U(-inf) = 1, U(+inf) = 0
out of the unstable manifold at U = 1.  For ignition reactions the unique
speed is the root of the tail limit; for KPP-type reactions the minimal
speed is the smallest c whose trajectory stays positive.
"""

import numpy as np
from scipy.integrate import solve_ivp


def _launch(reaction, c, s_max=4000.0, events=()):
    eps = 1e-7
    d = 1e-6
    fp1 = (reaction(1.0) - reaction(1.0 - d)) / d  # f'(1) <= 0
    mu = (-c + np.sqrt(c * c - 4 * fp1)) / 2.0

    def rhs(_, y):
        return [y[1], -c * y[1] - float(reaction(y[0]))]

    return solve_ivp(rhs, [0.0, s_max], [1.0 - eps, -eps * mu], events=events,
                     rtol=1e-10, atol=1e-12, max_step=1.0)


def ignition_wave_speed(reaction, c_lo=1e-3, c_hi=4.0, iters=60):
    """Unique front speed for an ignition reaction by shooting + bisection."""
    theta = reaction.theta

    def tail_limit(c):
        hit = lambda s, y: y[0] - theta
        hit.terminal = True
        hit.direction = -1
        sol = _launch(reaction, c, events=hit)
        if sol.t_events[0].size == 0:
            return 1.0  # stayed above theta: overdamped, c too large
        U, Up = sol.y_events[0][0]
        return U + Up / c  # linear-tail limit of U as s -> inf

    lo, hi = c_lo, c_hi
    assert tail_limit(lo) < 0 < tail_limit(hi), "speed bracket failed"
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if tail_limit(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def kpp_minimal_speed(reaction, c_lo=0.5, c_hi=4.0, iters=40):
    """Smallest wave speed with a nonnegative profile (KPP-type reactions)."""

    def stays_positive(c):
        neg = lambda s, y: y[0] + 1e-12
        neg.terminal = True
        neg.direction = -1
        small = lambda s, y: y[0] - 1e-9
        small.terminal = True
        small.direction = -1
        sol = _launch(reaction, c, events=(neg, small))
        return sol.t_events[0].size == 0

    lo, hi = c_lo, c_hi
    assert not stays_positive(lo) and stays_positive(hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if stays_positive(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def centered_difference_gradient(values, spacing, axis):
    """Second-order periodic finite differences, the brute-force comparator."""
    return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2 * spacing)
