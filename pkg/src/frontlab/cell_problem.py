"""Corrector equation and effective diffusivity on the unit torus.

Solves -Delta(chi) + u.grad(chi) = u.e with periodic boundary conditions and
zero mean, by preconditioned restarted GMRES on the pseudo-spectral
collocation operator.  The effective diffusivity in direction e is
1 + ||grad chi||^2.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .flows import PeriodicFlow, flow_on_grid, require_valid
from .grids import ScalarField, TorusGrid, gradient, integrate, l2_norm

PECLET_GATE = 4.0


class CellProblemError(RuntimeError):
    """Solver failure; carries the residual that was actually achieved."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass
class CellSolution:
    chi_e: ScalarField
    e: np.ndarray
    residual_norm: float
    d_eff: float
    iterations: int = 0


@dataclass
class EffectiveMatrix:
    entries: np.ndarray
    asymmetry: float = 0.0


@dataclass
class SweepResult:
    amplitudes: list
    d_effs: list
    grid_sizes: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    exponent: float | None = None
    failed_amplitude: float | None = None


def _unit(e) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    norm = np.linalg.norm(e)
    if norm == 0:
        raise ValueError("direction vector must be nonzero")
    return e / norm


class _SpectralCellOperator:
    """Matrix-free  chi -> -Delta(chi) + u.grad(chi) + mean(chi)  and its preconditioner.

    The mean term pins the constant null direction; for zero-mean right-hand
    sides the solution is automatically zero-mean.
    """

    def __init__(self, flow: PeriodicFlow, grid: TorusGrid):
        self.grid = grid
        self.shape_nd = grid.shape
        self.n_dof = int(np.prod(grid.shape))
        self.u = [flow.amplitude * c for c in flow.profile_components]
        n = grid.n_per_dim
        # real-transform layout: full frequencies except the (halved) last axis
        self.ik = []
        sym = np.zeros(grid.shape[:-1] + (n // 2 + 1,))
        for axis in range(grid.dim):
            if axis == grid.dim - 1:
                k = 2.0 * np.pi * np.fft.rfftfreq(n, d=grid.spacing)
            else:
                k = 2.0 * np.pi * np.fft.fftfreq(n, d=grid.spacing)
            shape = [1] * grid.dim
            shape[axis] = k.size
            sym = sym + k.reshape(shape) ** 2
            kd = k.copy()
            kd[n // 2] = 0.0  # Nyquist derivative is not representable
            self.ik.append(1j * kd.reshape(shape))
        self.minus_lap_sym = sym
        inv = sym.copy()
        inv[(0,) * grid.dim] = 1.0
        self.inv_sym = 1.0 / inv

    def apply(self, v_flat: np.ndarray) -> np.ndarray:
        v = v_flat.reshape(self.shape_nd)
        vhat = np.fft.rfftn(v)
        out = np.fft.irfftn(self.minus_lap_sym * vhat, s=self.shape_nd)
        for axis in range(self.grid.dim):
            dv = np.fft.irfftn(self.ik[axis] * vhat, s=self.shape_nd)
            out += self.u[axis] * dv
        out += np.mean(v)
        return out.ravel()

    def precondition(self, v_flat: np.ndarray) -> np.ndarray:
        v = v_flat.reshape(self.shape_nd)
        m = np.mean(v)
        vhat = np.fft.rfftn(v) * self.inv_sym
        vhat[(0,) * self.grid.dim] = 0.0
        return (np.fft.irfftn(vhat, s=self.shape_nd) + m).ravel()

    def residual(self, chi: np.ndarray, rhs: np.ndarray) -> float:
        r = self.apply(chi.ravel()) - np.mean(chi) - rhs.ravel()
        return float(np.sqrt(np.mean(r ** 2)))


def peclet_ok(flow: PeriodicFlow, grid: TorusGrid) -> bool:
    return grid.spacing * flow.sup_norm() <= PECLET_GATE


def minimum_resolution(flow: PeriodicFlow, n_min: int = 32) -> int:
    """Smallest even grid size passing the Peclet gate for this flow."""
    n = max(n_min, int(np.ceil(flow.sup_norm() / PECLET_GATE)))
    return n + (n % 2)


def solve_cell_problem(flow: PeriodicFlow, e, grid: TorusGrid | None = None,
                       tol: float = 1e-10, restart: int = 100,
                       max_restarts: int = 60, x0: ScalarField | None = None,
                       validate_flow: bool = True) -> CellSolution:
    """Zero-mean corrector for direction e, with relative residual <= tol."""
    if validate_flow:
        require_valid(flow)
    if grid is None:
        grid = flow.grid
    if grid.n_per_dim != flow.grid.n_per_dim:
        flow = flow_on_grid(flow, grid.n_per_dim)
    if not peclet_ok(flow, grid):
        warnings.warn(
            f"grid n={grid.n_per_dim} is coarse for sup|u|={flow.sup_norm():.3g} "
            f"(Peclet gate h*sup|u| <= {PECLET_GATE})", stacklevel=2)
    e = _unit(e)
    if e.size != grid.dim:
        raise ValueError("direction dimension does not match the grid")

    op = _SpectralCellOperator(flow, grid)
    rhs = np.zeros(grid.shape)
    for axis in range(grid.dim):
        rhs += op.u[axis] * e[axis]
    rhs_norm = float(np.sqrt(np.mean(rhs ** 2)))
    if rhs_norm == 0.0:
        chi = ScalarField(grid, np.zeros(grid.shape))
        return CellSolution(chi, e, 0.0, 1.0, iterations=0)

    A = LinearOperator((op.n_dof, op.n_dof), matvec=op.apply)
    M = LinearOperator((op.n_dof, op.n_dof), matvec=op.precondition)
    b = rhs.ravel()

    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    x = None if x0 is None else x0.values.ravel().copy()
    achieved = np.inf
    for attempt in range(3):
        x, info = gmres(A, b, x0=x, rtol=0.1 * tol, atol=0.0, restart=restart,
                        maxiter=max_restarts, M=M, callback=count,
                        callback_type="pr_norm")
        achieved = op.residual(x.reshape(grid.shape), rhs) / rhs_norm
        if achieved <= tol:
            break
        if info == 0 and attempt == 2:
            break
    if achieved > tol:
        raise CellProblemError(
            f"cell problem did not reach tol={tol:g} "
            f"(achieved {achieved:.3g} after {iters} iterations)",
            residual=achieved)

    chi_vals = x.reshape(grid.shape)
    chi_vals = chi_vals - np.mean(chi_vals)
    chi = ScalarField(grid, chi_vals)
    sol = CellSolution(chi, e, achieved, 1.0, iterations=iters)
    sol.d_eff = effective_diffusivity(sol)
    return sol


def effective_diffusivity(sol: CellSolution) -> float:
    """1 + ||grad chi_e||^2 over the torus."""
    total = 0.0
    for g in gradient(sol.chi_e):
        total += integrate(ScalarField(sol.chi_e.grid, g.values ** 2))
    return 1.0 + total


def solve_cell_problem_dense(flow: PeriodicFlow, e, grid: TorusGrid | None = None) -> CellSolution:
    """Dense direct solve of the same discrete system; small grids only.

    Independent of the Krylov path: the operator matrix is materialized
    column by column and handed to a dense LU solver.
    """
    if grid is None:
        grid = flow.grid
    if grid.n_per_dim != flow.grid.n_per_dim:
        flow = flow_on_grid(flow, grid.n_per_dim)
    e = _unit(e)
    op = _SpectralCellOperator(flow, grid)
    n_dof = op.n_dof
    if n_dof > 4096:
        raise ValueError(f"dense solve limited to 4096 dof, got {n_dof}")
    A = np.empty((n_dof, n_dof))
    probe = np.zeros(n_dof)
    for j in range(n_dof):
        probe[j] = 1.0
        A[:, j] = op.apply(probe)
        probe[j] = 0.0
    rhs = np.zeros(grid.shape)
    for axis in range(grid.dim):
        rhs += op.u[axis] * e[axis]
    x = np.linalg.solve(A, rhs.ravel())
    chi_vals = x.reshape(grid.shape)
    chi_vals = chi_vals - np.mean(chi_vals)
    rhs_norm = float(np.sqrt(np.mean(rhs ** 2)))
    res = op.residual(chi_vals, rhs) / rhs_norm if rhs_norm > 0 else 0.0
    chi = ScalarField(grid, chi_vals)
    sol = CellSolution(chi, e, res, 1.0)
    sol.d_eff = effective_diffusivity(sol)
    return sol


def effective_matrix(flow: PeriodicFlow, grid: TorusGrid | None = None,
                     tol: float = 1e-10) -> EffectiveMatrix:
    """Full effective matrix D(u), symmetrized, with the raw asymmetry reported."""
    if grid is None:
        grid = flow.grid
    dim = grid.dim
    sols = [solve_cell_problem(flow, np.eye(dim)[i], grid, tol=tol) for i in range(dim)]
    grads = [[g.values for g in gradient(s.chi_e)] for s in sols]
    D = np.eye(dim)
    for i in range(dim):
        for j in range(dim):
            cross = sum(
                integrate(ScalarField(grid, grads[i][a] * grads[j][a]))
                for a in range(dim)
            )
            # the e_i . int(grad chi_j) terms vanish by periodicity; keep them
            # so the reported asymmetry reflects the actual quadrature
            lin = sum(
                np.eye(dim)[i][a] * integrate(ScalarField(grid, grads[j][a]))
                + np.eye(dim)[j][a] * integrate(ScalarField(grid, grads[i][a]))
                for a in range(dim)
            )
            D[i, j] += cross + lin
    asym = float(np.max(np.abs(D - D.T)))
    return EffectiveMatrix(0.5 * (D + D.T), asym)


def diffusivity_amplitude_sweep(flow: PeriodicFlow, e, amplitudes,
                                tol: float = 1e-8, n_min: int = 32,
                                n_max: int = 720) -> SweepResult:
    """Effective diffusivity along increasing amplitudes, with a log-log fit.

    The resolution for each amplitude is the smallest even n passing the
    Peclet gate (capped at n_max); each solve warm-starts from the previous
    corrector.  The exponent is fitted over the upper half of the amplitude
    list.  A failed member aborts the sweep and the partial results ride on
    the raised error.
    """
    amplitudes = list(amplitudes)
    if any(b <= a for a, b in zip(amplitudes, amplitudes[1:])):
        raise ValueError("amplitude list must be strictly increasing")
    from .flows import scale as scale_flow
    from .grids import spectral_resample

    result = SweepResult([], [], [])
    prev_chi = None
    for a in amplitudes:
        fa = scale_flow(flow, a / flow.amplitude if flow.amplitude else a)
        if a == 0.0:
            result.amplitudes.append(a)
            result.d_effs.append(1.0)
            result.grid_sizes.append(flow.grid.n_per_dim)
            result.residuals.append(0.0)
            result.iterations.append(0)
            continue
        n = min(minimum_resolution(fa, n_min=n_min), n_max)
        grid = TorusGrid(flow.grid.dim, n)
        x0 = None
        if prev_chi is not None:
            x0 = spectral_resample(prev_chi, n)
        try:
            sol = solve_cell_problem(fa, e, grid, tol=tol, x0=x0)
        except CellProblemError as err:
            result.failed_amplitude = a
            result.exponent = _fit_upper_half(result.amplitudes, result.d_effs)
            raise CellSweepError(str(err), result) from err
        prev_chi = sol.chi_e
        result.amplitudes.append(a)
        result.d_effs.append(sol.d_eff)
        result.grid_sizes.append(n)
        result.residuals.append(sol.residual_norm)
        result.iterations.append(sol.iterations)
    result.exponent = _fit_upper_half(result.amplitudes, result.d_effs)
    return result


class CellSweepError(CellProblemError):
    def __init__(self, message, partial: SweepResult):
        super().__init__(message)
        self.partial = partial


def _fit_upper_half(amplitudes, values) -> float | None:
    pairs = [(a, v) for a, v in zip(amplitudes, values) if a > 0 and v > 0]
    if len(pairs) < 2:
        return None
    half = pairs[(len(pairs) - 1) // 2:]
    la = np.log([p[0] for p in half])
    lv = np.log([p[1] for p in half])
    slope = np.polyfit(la, lv, 1)[0]
    return float(slope)
