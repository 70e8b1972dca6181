"""Combustion-type reaction nonlinearities.

Every reaction carries the metadata the integrator gates need (Lipschitz
constant, sup of f(s)/s, derivative at 0) plus a small code/parameter set the
compiled kernels understand.  Reactions outside the built-in families are
handled through a lookup table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CODE_NONE = 0
CODE_KPP_QUADRATIC = 1
CODE_IGNITION = 2
CODE_TABLE = 3

_TABLE_SIZE = 8193
_EMPTY_TABLE = np.zeros(1)


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


@dataclass
class ReactionFunction:
    kind: str  # "ignition" | "kpp" | "generic"
    theta: float
    fprime0: float
    sup_f_over_s: float
    lipschitz: float
    code: int
    amplitude: float = 1.0
    smoothing: float = 0.0
    table: np.ndarray = field(default_factory=lambda: _EMPTY_TABLE)
    name: str = ""

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.code == CODE_NONE:
            return np.zeros_like(s)
        if self.code == CODE_KPP_QUADRATIC:
            return self.amplitude * s * (1.0 - s)
        if self.code == CODE_IGNITION:
            w = _smoothstep((s - self.theta) / self.smoothing)
            out = self.amplitude * s * (1.0 - s) * w
            return np.where(s <= self.theta, 0.0, out)
        sc = np.clip(s, 0.0, 1.0)
        pos = sc * (_TABLE_SIZE - 1)
        i = np.minimum(pos.astype(np.int64), _TABLE_SIZE - 2)
        frac = pos - i
        return (1.0 - frac) * self.table[i] + frac * self.table[i + 1]


def _numeric_metadata(f):
    s = np.linspace(0.0, 1.0, 20001)
    v = f(s)
    lip = float(np.max(np.abs(np.diff(v) / np.diff(s))))
    ratio = v[1:] / s[1:]
    return lip, float(np.max(ratio))


def kpp_quadratic(m: float = 1.0) -> ReactionFunction:
    """KPP reaction m*s*(1-s); f'(0) = m and f(s) <= f'(0)*s."""
    r = ReactionFunction("kpp", 0.0, m, m, m, CODE_KPP_QUADRATIC, amplitude=m,
                         name=f"kpp:m={m:g}")
    lip, sup = _numeric_metadata(r)
    r.lipschitz, r.sup_f_over_s = lip, sup
    return r


def smoothed_ignition(theta: float = 0.25, m: float = 1.0,
                      smoothing: float = 0.05) -> ReactionFunction:
    """Ignition reaction m*s*(1-s) switched on smoothly above theta.

    The switch is the cubic smoothstep over [theta, theta + smoothing], so f
    is C1, zero on [0, theta] and positive on (theta, 1).
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("ignition temperature must lie in (0, 1)")
    if smoothing <= 0 or theta + smoothing >= 1.0:
        raise ValueError("smoothing width must be positive with theta + smoothing < 1")
    r = ReactionFunction("ignition", theta, 0.0, 0.0, 0.0, CODE_IGNITION,
                         amplitude=m, smoothing=smoothing,
                         name=f"ignition:theta={theta:g},m={m:g}")
    lip, sup = _numeric_metadata(r)
    r.lipschitz, r.sup_f_over_s = lip, sup
    return r


def from_callable(f, kind: str = "generic", theta: float = 0.0,
                  name: str = "custom") -> ReactionFunction:
    """Wrap an arbitrary nonnegative f with f(0)=f(1)=0 via a lookup table."""
    s = np.linspace(0.0, 1.0, _TABLE_SIZE)
    table = np.asarray(f(s), dtype=float)
    if table[0] != 0.0 or table[-1] != 0.0:
        raise ValueError("reaction must vanish at 0 and 1")
    if np.any(table < 0.0):
        raise ValueError("reaction must be nonnegative on [0, 1]")
    r = ReactionFunction(kind, theta, 0.0, 0.0, 0.0, CODE_TABLE, table=table,
                         name=name)
    lip, sup = _numeric_metadata(r)
    r.lipschitz, r.sup_f_over_s = lip, sup
    r.fprime0 = float(table[1] * (_TABLE_SIZE - 1))
    if kind == "kpp" and np.any(table[1:] > r.fprime0 * s[1:] * (1 + 1e-9)):
        raise ValueError("KPP condition f(s) <= s f'(0) violated")
    return r


def scale_reaction(r: ReactionFunction, m: float) -> ReactionFunction:
    """The reaction m*f; metadata scales linearly."""
    if r.code == CODE_TABLE:
        out = ReactionFunction(r.kind, r.theta, 0.0, 0.0, 0.0, CODE_TABLE,
                               table=m * r.table, name=f"{r.name}*{m:g}")
        out.fprime0 = m * r.fprime0
    else:
        out = ReactionFunction(r.kind, r.theta, m * r.fprime0, 0.0, 0.0, r.code,
                               amplitude=m * r.amplitude, smoothing=r.smoothing,
                               name=f"{r.name}*{m:g}")
    out.lipschitz = m * r.lipschitz
    out.sup_f_over_s = m * r.sup_f_over_s
    return out


def reaction_from_name(spec: str) -> ReactionFunction:
    """Catalog: kpp[:m=..]; ignition[:theta=..][,m=..][,smoothing=..]."""
    head, _, rest = spec.partition(":")
    kwargs = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            kwargs[key.strip()] = float(val)
    if head == "kpp":
        return kpp_quadratic(**kwargs)
    if head == "ignition":
        return smoothed_ignition(**kwargs)
    raise ValueError(f"unknown reaction name: {spec!r}")
