import numpy as np
import pytest

from frontlab import flows, front_speed as fs, reactions
from frontlab.grids import ScalarField, StripGrid, TorusGrid
from oracles import ignition_wave_speed


@pytest.fixture(scope="module")
def ignition():
    return reactions.smoothed_ignition(0.25, m=1.0, smoothing=0.05)


class TestZeroFlowSpeeds:
    def test_ignition_matches_shooting_oracle(self, ignition):
        oracle = ignition_wave_speed(ignition)
        sim = fs.zero_flow_speed(ignition)
        assert abs(sim - oracle) / oracle < 0.03

    def test_speed_monotone_in_reaction(self, ignition):
        weaker = reactions.smoothed_ignition(0.25, m=0.5)
        c_weak = fs.zero_flow_speed(weaker)
        c_full = fs.zero_flow_speed(ignition)
        assert c_weak <= c_full * 1.02

    def test_scaled_reaction_speed_scales_like_sqrt(self, ignition):
        # c(mf) ~ sqrt(m) c(f) for ignition-type scaling (approximate)
        quarter = reactions.scale_reaction(ignition, 0.25)
        c_q = fs.zero_flow_speed(quarter)
        c_f = fs.zero_flow_speed(ignition)
        assert c_q / c_f == pytest.approx(0.5, abs=0.08)


class TestFitProtocol:
    def test_clean_linear_motion_accepted(self):
        t = np.linspace(0, 20, 200)
        x = 1.3 * t + 5.0
        from frontlab.evolve import EvolveResult
        grid = StripGrid(40.0, 1281, TorusGrid(1, 8))
        res = EvolveResult(grid=grid, final=None, dt=1e-3, n_steps=1,
                           series={"t": t, "front_pos": x})
        est = fs.fit_front_speed(res)
        assert est.accepted
        assert est.speed == pytest.approx(1.3, rel=1e-12)
        assert est.fit_rsquared > 0.999999

    def test_quenched_run_raises(self):
        from frontlab.evolve import EvolveResult
        grid = StripGrid(10.0, 321, TorusGrid(1, 8))
        t = np.linspace(0, 5, 50)
        res = EvolveResult(grid=grid, final=None, dt=1e-3, n_steps=1,
                           series={"t": t, "front_pos": np.full(50, np.nan)})
        with pytest.raises(fs.FrontMeasurementError, match="quenched|usable"):
            fs.fit_front_speed(res)

    def test_drifting_slope_rejected(self):
        from frontlab.evolve import EvolveResult
        t = np.linspace(0, 20, 400)
        x = 0.05 * t ** 2  # strongly accelerating
        grid = StripGrid(40.0, 1281, TorusGrid(1, 8))
        res = EvolveResult(grid=grid, final=None, dt=1e-3, n_steps=1,
                           series={"t": t, "front_pos": x})
        est = fs.fit_front_speed(res)
        assert not est.accepted


class TestFrontIntegrals:
    @pytest.fixture(scope="class")
    def ignition_run(self, ignition):
        cfg = fs.FrontRunConfig(n_cross=8, h_x=1 / 32, snapshots_per_cell=12,
                                t_end=24.0)
        est = fs.estimate_front_speed(None, ignition, cfg=cfg,
                                      expected_speed=0.89, keep_result=True)
        return est

    def test_reaction_integral_is_one(self, ignition_run, ignition):
        ri, di = fs.front_integral_checks(ignition_run.run, ignition,
                                          ignition_run.speed)
        assert ri == pytest.approx(1.0, abs=0.05)
        assert di <= 0.5 + 0.02

    def test_scaled_reaction_integral_still_one(self):
        # the identity is normalization-independent
        strong = reactions.smoothed_ignition(0.25, m=4.0)
        cfg = fs.FrontRunConfig(n_cross=8, h_x=1 / 48, snapshots_per_cell=12,
                                t_end=15.0)
        est = fs.estimate_front_speed(None, strong, cfg=cfg,
                                      expected_speed=1.8, keep_result=True)
        ri, _ = fs.front_integral_checks(est.run, strong, est.speed)
        assert ri == pytest.approx(1.0, abs=0.05)

    def test_refuses_without_snapshots(self, ignition):
        cfg = fs.FrontRunConfig(n_cross=8, h_x=1 / 32, t_end=12.0)
        est = fs.estimate_front_speed(None, ignition, cfg=cfg,
                                      expected_speed=0.89, keep_result=True)
        with pytest.raises(fs.FrontMeasurementError):
            fs.front_integral_checks(est.run, ignition, est.speed)


class TestFrontWidth:
    def _strip(self, n_x=161, n_y=32, length=5.0):
        return StripGrid(length, n_x, TorusGrid(1, n_y))

    def test_step_profile_zero_diameters(self):
        grid = self._strip()
        x = grid.x_axis()[:, None]
        field = ScalarField(grid, np.where(x < 2.5, 1.0, 0.0) * np.ones((1, 32)))
        rep = fs.front_width(field, zeta=0.1, xi=0.9, epsilon=0.05,
                             front_position=2.5, margin=0.5)
        assert rep.max_component_diameter_ahead == 0.0
        assert rep.max_component_diameter_behind == 0.0

    def test_uniform_one_large_ahead_zone(self):
        grid = self._strip()
        field = ScalarField(grid, np.ones(grid.shape))
        rep = fs.front_width(field, zeta=0.1, xi=0.9, epsilon=0.05,
                             front_position=1.0, margin=0.5)
        assert rep.max_component_diameter_ahead > 1.0

    def test_isolated_blob_diameter(self):
        grid = self._strip()
        vals = np.zeros(grid.shape)
        vals[120:130, 4:7] = 1.0  # 10 x 3 cells => dx ~ 9/32, dy ~ 2/32
        field = ScalarField(grid, vals)
        rep = fs.front_width(field, zeta=0.2, xi=0.9, epsilon=0.05,
                             front_position=1.0, margin=0.5)
        hx = grid.spacing_x
        expect = np.hypot(9 * hx, 2 / 32)
        assert rep.max_component_diameter_ahead == pytest.approx(expect, rel=1e-12)

    def test_periodic_seam_merged(self):
        grid = self._strip()
        vals = np.zeros(grid.shape)
        vals[100:105, :2] = 1.0
        vals[100:105, -2:] = 1.0  # wraps across the seam; dy spans 3 cells
        field = ScalarField(grid, vals)
        rep = fs.front_width(field, zeta=0.2, xi=0.9, epsilon=0.05,
                             front_position=1.0, margin=0.5)
        expect = np.hypot(4 * grid.spacing_x, 3 / 32)
        assert rep.max_component_diameter_ahead == pytest.approx(expect, rel=1e-12)

    def test_degenerate_thresholds_rejected(self):
        grid = self._strip()
        field = ScalarField(grid, np.zeros(grid.shape))
        with pytest.raises(ValueError):
            fs.front_width(field, zeta=0.5, xi=0.6, epsilon=0.2,
                           front_position=1.0)


class TestSweepPlumbing:
    def test_singleton_returns_speed_only(self, ignition):
        sh = flows.flow_from_name("shear:sin", 32)
        res = fs.speed_scaling_sweep(sh, ignition, [4.0],
                                     cfg=fs.FrontRunConfig(n_cross=16))
        assert res.exponent is None
        assert len(res.speeds) == 1
        assert res.speeds[0] > 0

    def test_requires_increasing_amplitudes(self, ignition):
        sh = flows.flow_from_name("shear:sin", 32)
        with pytest.raises(ValueError):
            fs.speed_scaling_sweep(sh, ignition, [8.0, 4.0])

    def test_direction_must_be_lattice(self, ignition):
        sh = flows.flow_from_name("shear:sin", 32)
        with pytest.raises(fs.FrontMeasurementError):
            fs.estimate_front_speed(sh, ignition, e=(1.0, 1.0))
