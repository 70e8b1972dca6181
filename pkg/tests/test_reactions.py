import numpy as np
import pytest

from frontlab import reactions


class TestKPP:
    def test_endpoints_and_positivity(self):
        f = reactions.kpp_quadratic()
        assert f(0.0) == 0.0
        assert f(1.0) == 0.0
        s = np.linspace(0.01, 0.99, 199)
        assert np.all(f(s) > 0)

    def test_kpp_condition(self):
        f = reactions.kpp_quadratic()
        s = np.linspace(1e-6, 1, 1000)
        assert np.all(f(s) <= s * f.fprime0 + 1e-15)

    def test_metadata(self):
        f = reactions.kpp_quadratic(m=2.0)
        assert f.fprime0 == 2.0
        assert f.sup_f_over_s == pytest.approx(2.0, rel=1e-3)
        assert f.lipschitz == pytest.approx(2.0, rel=1e-3)


class TestIgnition:
    def test_vanishes_below_theta(self):
        f = reactions.smoothed_ignition(0.25)
        s = np.linspace(0, 0.25, 100)
        assert np.all(f(s) == 0.0)
        assert f(1.0) == 0.0

    def test_positive_above_theta(self):
        f = reactions.smoothed_ignition(0.25)
        s = np.linspace(0.2501, 0.999, 500)
        assert np.all(f(s) > 0)

    def test_fprime0_zero(self):
        assert reactions.smoothed_ignition(0.25).fprime0 == 0.0

    def test_invalid_theta(self):
        with pytest.raises(ValueError):
            reactions.smoothed_ignition(0.0)
        with pytest.raises(ValueError):
            reactions.smoothed_ignition(0.98, smoothing=0.05)


class TestTable:
    def test_round_trip(self):
        f = reactions.from_callable(lambda s: 4 * s * (1 - s), kind="kpp")
        s = np.linspace(0, 1, 777)
        assert np.max(np.abs(f(s) - 4 * s * (1 - s))) < 1e-6
        assert f.fprime0 == pytest.approx(4.0, rel=1e-3)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            reactions.from_callable(lambda s: np.sin(4 * np.pi * s))

    def test_rejects_nonvanishing(self):
        with pytest.raises(ValueError):
            reactions.from_callable(lambda s: s)


def test_scale_reaction():
    f = reactions.smoothed_ignition(0.25)
    g = reactions.scale_reaction(f, 0.25)
    s = np.linspace(0, 1, 100)
    assert np.allclose(g(s), 0.25 * f(s))
    assert g.sup_f_over_s == pytest.approx(0.25 * f.sup_f_over_s)
    assert g.lipschitz == pytest.approx(0.25 * f.lipschitz)


def test_reaction_from_name():
    f = reactions.reaction_from_name("ignition:theta=0.25,m=0.5")
    assert f.theta == 0.25
    assert f.kind == "ignition"
    g = reactions.reaction_from_name("kpp")
    assert g.kind == "kpp"
    with pytest.raises(ValueError):
        reactions.reaction_from_name("arrhenius")
