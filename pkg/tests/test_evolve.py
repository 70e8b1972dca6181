import numpy as np
import pytest

from frontlab import flows, reactions
from frontlab.evolve import (ConfigError, EvolveConfig, comparison_check,
                             evolve, mixing_decay)
from frontlab.grids import ScalarField, StripGrid, TorusGrid, integrate

TWO_PI = 2 * np.pi


def gaussian_bump(grid, amp=0.4, base=0.3, sigma=0.08):
    x, y = grid.meshgrid()
    return ScalarField(grid, base + amp * np.exp(-(x ** 2 + y ** 2) / (2 * sigma ** 2)))


@pytest.fixture(scope="module")
def grid64():
    return TorusGrid(2, 64)


class TestHeatLimit:
    def test_relaxes_to_mean(self, grid64):
        T0 = gaussian_bump(grid64)
        res = evolve(T0, None, None, EvolveConfig(t_end=1.0, dt_max=0.005))
        target = np.mean(T0.values)
        assert np.max(np.abs(res.final.values - target)) < 1e-6

    def test_sup_decays_monotonically(self, grid64):
        T0 = gaussian_bump(grid64)
        res = evolve(T0, None, None, EvolveConfig(t_end=0.5, dt_max=0.005,
                                                  series_dt=0.02))
        sup = res.series["sup"]
        assert np.all(np.diff(sup) <= 1e-12)


class TestConservation:
    def test_mass_conserved_with_flow(self, grid64):
        T0 = gaussian_bump(grid64)
        u = flows.scale(flows.make_cellular(grid64), 20.0)
        res = evolve(T0, u, None, EvolveConfig(t_end=0.3, series_dt=0.05))
        mass = res.series["mass"]
        assert abs(mass[-1] - mass[0]) < 1e-8

    def test_constants_preserved_exactly(self, grid64):
        u = flows.scale(flows.make_cellular(grid64), 10.0)
        T0 = ScalarField(grid64, np.full(grid64.shape, 0.37))
        res = evolve(T0, u, None, EvolveConfig(t_end=0.05))
        assert np.max(np.abs(res.final.values - 0.37)) < 1e-13


class TestEquilibriaAndRange:
    def test_kpp_one_stays_one(self, grid64):
        T0 = ScalarField(grid64, np.ones(grid64.shape))
        res = evolve(T0, None, reactions.kpp_quadratic(),
                     EvolveConfig(t_end=0.5, dt_max=0.01))
        assert np.max(np.abs(res.final.values - 1.0)) < 1e-13

    def test_range_preservation(self, grid64):
        rng = np.random.default_rng(0)
        vals = np.clip(rng.uniform(0, 1, grid64.shape), 0, 1)
        # smooth the noise a little so it is advectable
        vhat = np.fft.rfft2(vals)
        vhat[12:, :] = 0
        vhat[:, 12:] = 0
        vals = np.fft.irfft2(vhat, s=grid64.shape)
        vals = (vals - vals.min()) / (vals.max() - vals.min())
        u = flows.scale(flows.make_cellular(grid64), 15.0)
        res = evolve(ScalarField(grid64, vals), u, reactions.kpp_quadratic(),
                     EvolveConfig(t_end=0.2))
        assert res.overshoot <= 1e-8
        assert not res.overshoot_flagged

    def test_order_preservation(self, grid64):
        lo = gaussian_bump(grid64, amp=0.3, base=0.2)
        hi = ScalarField(grid64, lo.values + 0.15)
        u = flows.scale(flows.make_cellular(grid64), 10.0)
        f = reactions.kpp_quadratic()
        cfg = EvolveConfig(t_end=0.25)
        r_lo = evolve(lo, u, f, cfg)
        r_hi = evolve(hi, u, f, cfg)
        assert np.max(r_lo.final.values - r_hi.final.values) < 1e-6


class TestComparisonChain:
    def test_no_reaction_equality(self, grid64):
        T0 = gaussian_bump(grid64)
        zero_f = reactions.scale_reaction(reactions.kpp_quadratic(), 0.0)
        rep = comparison_check(T0, None, zero_f, t=0.25)
        assert rep.max_psi_above_T < 1e-12
        assert rep.max_T_above_bound < 1e-12

    def test_subignition_data_stays_linear(self, grid64):
        f = reactions.smoothed_ignition(0.25)
        T0 = gaussian_bump(grid64, amp=0.15, base=0.05)  # max 0.2 < theta
        u = flows.scale(flows.make_cellular(grid64), 5.0)
        cfg = EvolveConfig(t_end=0.5)
        with_r = evolve(T0, u, f, cfg)
        without = evolve(T0, u, None, cfg)
        assert np.max(np.abs(with_r.final.values - without.final.values)) < 1e-12

    def test_kpp_cellular_chain(self, grid64):
        f = reactions.kpp_quadratic()
        T0 = gaussian_bump(grid64, amp=0.5, base=0.1)
        u = flows.scale(flows.make_cellular(grid64), 20.0)
        rep = comparison_check(T0, u, f, t=1.0, n_checks=4)
        assert rep.passed, (rep.max_negative_psi, rep.max_psi_above_T,
                            rep.max_T_above_bound)


class TestStrip:
    def test_dirichlet_pins_boundaries(self):
        strip = StripGrid(8.0, 257, TorusGrid(1, 16))
        x = strip.x_axis()[:, None]
        T0 = ScalarField(strip, np.clip(2.0 - x, 0, 1) * np.ones((1, 16)))
        res = evolve(T0, None, None, EvolveConfig(t_end=0.5, bc_kind="dirichlet"))
        assert np.all(res.final.values[0] == 1.0)
        assert np.all(res.final.values[-1] == 0.0)

    def test_neumann_conserves_mass(self):
        strip = StripGrid(6.0, 193, TorusGrid(1, 16), x0=-3.0)
        x = strip.x_axis()[:, None]
        T0 = ScalarField(strip, np.exp(-x ** 2) * np.ones((1, 16)))
        res = evolve(T0, None, None, EvolveConfig(t_end=0.5, bc_kind="neumann",
                                                  series_dt=0.1))
        mass = res.series["mass"]
        assert abs(mass[-1] - mass[0]) < 1e-8

    def test_front_position_tracked(self):
        strip = StripGrid(10.0, 321, TorusGrid(1, 8))
        x = strip.x_axis()[:, None]
        T0 = ScalarField(strip, np.where(x <= 3.0, 1.0,
                                         np.exp(-(x - 3.0) ** 2)) * np.ones((1, 8)))
        res = evolve(T0, None, reactions.kpp_quadratic(),
                     EvolveConfig(t_end=1.0, series_dt=0.25))
        t, pos = res.front_positions()
        assert np.isfinite(pos).all()
        assert pos[-1] > pos[0]


class TestConfigGates:
    def test_cfl_cap_rejected(self):
        with pytest.raises(ConfigError):
            EvolveConfig(t_end=1.0, cfl=0.8)

    def test_explicit_dt_gate(self, grid64):
        u = flows.scale(flows.make_cellular(grid64), 50.0)
        T0 = gaussian_bump(grid64)
        with pytest.raises(ConfigError):
            evolve(T0, u, None, EvolveConfig(t_end=0.1, dt=0.01))

    def test_bad_bc_name(self):
        with pytest.raises(ConfigError):
            EvolveConfig(t_end=1.0, bc_kind="absorbing")


class TestMixingDecay:
    def test_zero_flow_rate_near_heat_mode(self, grid64):
        u0 = flows.make_zero(grid64)
        rep = mixing_decay(u0, [0.1, 0.15, 0.2, 0.25], probe_count=2, seed=3)
        assert rep.rate == pytest.approx(4 * np.pi ** 2, rel=0.05)

    def test_cellular_mixes_faster(self, grid64):
        t_list = [0.05, 0.1, 0.15]
        base = mixing_decay(flows.make_zero(grid64), t_list, probe_count=2, seed=3)
        fast = mixing_decay(flows.scale(flows.make_cellular(grid64), 50.0),
                            t_list, probe_count=2, seed=3)
        assert fast.rate >= base.rate

    def test_t_zero_reports_initial_deviation(self, grid64):
        rep = mixing_decay(flows.make_zero(grid64), [0.0, 0.1], probe_count=1,
                           seed=1)
        assert rep.sup_distance[0] > 1.0  # narrow normalized probe peaks high

    def test_probe_width_gate(self, grid64):
        with pytest.raises(ValueError):
            mixing_decay(flows.make_zero(grid64), [0.1], sigma_cells=1.0)


def test_convergence_under_refinement():
    # halving dt changes the solution only slightly (first-order splitting)
    g = TorusGrid(2, 32)
    T0 = gaussian_bump(g)
    u = flows.scale(flows.make_cellular(g), 5.0)
    f = reactions.kpp_quadratic()
    r1 = evolve(T0, u, f, EvolveConfig(t_end=0.2, dt=2e-4))
    r2 = evolve(T0, u, f, EvolveConfig(t_end=0.2, dt=1e-4))
    assert np.max(np.abs(r1.final.values - r2.final.values)) < 5e-4
