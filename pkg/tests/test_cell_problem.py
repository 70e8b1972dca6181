import warnings

import numpy as np
import pytest

from frontlab import cell_problem as cp
from frontlab import flows
from frontlab.grids import TorusGrid


def sine_shear(n=64, amp=1.0):
    return flows.scale(flows.flow_from_name("shear:sin", n), amp)


def exact_shear_deff(amp):
    return 1.0 + amp ** 2 / (8 * np.pi ** 2)


class TestSolve:
    def test_zero_flow(self):
        u = flows.make_zero(TorusGrid(2, 32))
        sol = cp.solve_cell_problem(u, [1, 0])
        assert sol.d_eff == 1.0
        assert np.all(sol.chi_e.values == 0.0)

    @pytest.mark.parametrize("amp", [1.0, 4.0, 16.0])
    def test_sine_shear_analytic(self, amp):
        sol = cp.solve_cell_problem(sine_shear(128, amp), [1, 0], tol=1e-10)
        assert sol.d_eff == pytest.approx(exact_shear_deff(amp), rel=1e-6)
        # -chi'' = amp*sin(2 pi x2), so chi = amp*sin(2 pi x2)/(4 pi^2)
        _, y = sol.chi_e.grid.meshgrid()
        expect = amp * np.sin(2 * np.pi * y) / (4 * np.pi ** 2)
        assert np.max(np.abs(sol.chi_e.values - expect)) < 1e-8 * amp

    def test_orthogonal_direction_trivial(self):
        sol = cp.solve_cell_problem(sine_shear(32), [0, 1])
        assert sol.d_eff == 1.0

    def test_zero_mean_corrector(self):
        u = flows.scale(flows.make_cellular(TorusGrid(2, 64)), 20.0)
        sol = cp.solve_cell_problem(u, [1, 0], tol=1e-10)
        assert abs(np.mean(sol.chi_e.values)) < 1e-12
        assert sol.residual_norm <= 1e-10

    def test_deff_at_least_one(self):
        for amp in (5.0, 50.0):
            u = flows.scale(flows.make_cellular(TorusGrid(2, 96)), amp)
            sol = cp.solve_cell_problem(u, [1, 0], tol=1e-8)
            assert sol.d_eff >= 1.0

    def test_peclet_warning(self):
        u = flows.scale(flows.make_cellular(TorusGrid(2, 16)), 100.0)
        with pytest.warns(UserWarning, match="coarse"):
            cp.solve_cell_problem(u, [1, 0], tol=1e-6)

    def test_nonconvergence_reports_residual(self):
        u = flows.scale(flows.make_cellular(TorusGrid(2, 32)), 30.0)
        with pytest.raises(cp.CellProblemError) as err:
            cp.solve_cell_problem(u, [1, 0], tol=1e-10, restart=4, max_restarts=1)
        assert err.value.residual is not None
        assert err.value.residual > 1e-10


class TestDenseOracle:
    @pytest.mark.parametrize("n,amp", [(16, 10.0), (32, 10.0)])
    def test_krylov_matches_dense(self, n, amp):
        u = flows.scale(flows.make_cellular(TorusGrid(2, n)), amp)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            k = cp.solve_cell_problem(u, [1, 0], tol=1e-12)
            d = cp.solve_cell_problem_dense(u, [1, 0])
        ref = np.max(np.abs(d.chi_e.values))
        assert np.max(np.abs(k.chi_e.values - d.chi_e.values)) / ref < 1e-8
        assert abs(k.d_eff - d.d_eff) < 1e-10

    def test_dense_guard(self):
        u = flows.make_cellular(TorusGrid(2, 128))
        with pytest.raises(ValueError):
            cp.solve_cell_problem_dense(u, [1, 0])


class TestEffectiveMatrix:
    def test_zero_flow_identity(self):
        u = flows.make_zero(TorusGrid(2, 16))
        em = cp.effective_matrix(u)
        assert np.allclose(em.entries, np.eye(2), atol=1e-14)

    def test_sine_shear_diagonal(self):
        em = cp.effective_matrix(sine_shear(64, 1.0))
        expect = np.diag([exact_shear_deff(1.0), 1.0])
        assert np.allclose(em.entries, expect, atol=1e-9)

    def test_cellular_symmetric_spd(self):
        u = flows.scale(flows.make_cellular(TorusGrid(2, 96)), 50.0)
        em = cp.effective_matrix(u, tol=1e-9)
        D = em.entries
        assert em.asymmetry < 1e-8
        assert abs(D[0, 0] - D[1, 1]) < 1e-6 * D[0, 0]
        eigs = np.linalg.eigvalsh(D)
        assert np.all(eigs > 0)
        assert np.all(np.diag(D) >= 1.0 - 1e-12)

    def test_matches_directional_solve(self):
        u = flows.scale(flows.make_cellular(TorusGrid(2, 64)), 20.0)
        em = cp.effective_matrix(u, tol=1e-10)
        sol = cp.solve_cell_problem(u, [1, 0], tol=1e-10)
        assert abs(em.entries[0, 0] - sol.d_eff) < 1e-9


class TestSweep:
    def test_shear_quadratic_slope(self):
        # d_eff = 1 + A^2/(8 pi^2): slope tends to 2 once A^2 dominates
        res = cp.diffusivity_amplitude_sweep(sine_shear(64), [1, 0],
                                             [32, 64, 128, 256], tol=1e-10)
        assert res.exponent == pytest.approx(2.0, abs=0.05)

    def test_zero_amplitude_entry(self):
        res = cp.diffusivity_amplitude_sweep(sine_shear(32), [1, 0], [0.0, 2.0])
        assert res.d_effs[0] == 1.0

    def test_requires_increasing(self):
        with pytest.raises(ValueError):
            cp.diffusivity_amplitude_sweep(sine_shear(32), [1, 0], [4.0, 2.0])

    def test_grid_refinement_stability(self):
        u = flows.scale(flows.make_cellular(TorusGrid(2, 64)), 25.0)
        d1 = cp.solve_cell_problem(u, [1, 0], TorusGrid(2, 64), tol=1e-9).d_eff
        d2 = cp.solve_cell_problem(u, [1, 0], TorusGrid(2, 128), tol=1e-9).d_eff
        assert abs(d2 - d1) / d1 < 0.01


def test_minimum_resolution_gate():
    u = flows.scale(flows.make_cellular(TorusGrid(2, 32)), 100.0)
    n = cp.minimum_resolution(u)
    assert n % 2 == 0
    assert 1.0 / n * u.sup_norm() <= cp.PECLET_GATE
