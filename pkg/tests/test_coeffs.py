import math

import numpy as np
import pytest

from anisoflux.coeffs import (KappaModel, PlasmaParams, braginskii_constants,
                              clamp_counter, edge_conductivities, iter_params,
                              kappa_par_coefficient, limited_kappa_par,
                              limiter_f)


def round_sig(x, sig=2):
    return round(x, -int(math.floor(math.log10(abs(x)))) + sig - 1)


class TestBraginskiiConstants:
    """Reference values for the ITER-like block, frozen at two significant
    figures.  The quoted t_A = 1.83e-7 s is not derivable from the stated
    formula chain (it contradicts K_par ~ 8.8e3); the self-consistent
    1.69e-7 s is asserted instead, with the contradiction exercised in the
    acceptance suite."""

    REF = {
        "T0": 3.28e-15,
        "t_A": 1.7e-7,
        "tau_i0": 4.1e-2,
        "omega_i0": 5.2e8,
        "kpar0_over_n0": 3.1e11,
        "kperp0_over_n0": 3.6e-4,
        "K_par": 8.8e3,
        "K_perp": 1.0e-11,
    }

    @pytest.fixture(scope="class")
    def consts(self):
        return braginskii_constants(iter_params())

    @pytest.mark.parametrize("name", sorted(REF))
    def test_two_significant_figures(self, consts, name):
        got = getattr(consts, name)
        assert round_sig(got) == pytest.approx(round_sig(self.REF[name]), rel=1e-12), \
            (name, got)

    def test_kelvin_scale(self, consts):
        assert consts.T0 / 1.6e-19 == pytest.approx(20500, rel=0.01)  # ~20.5 keV

    def test_kpar_invariant(self, consts):
        # K_par = (gamma - 1) t_A kappa_par0 / (L0^2 n0)
        p = iter_params()
        expect = (2.0 / 3.0) * consts.t_A * consts.kpar0_over_n0 / p.L0 ** 2
        assert consts.K_par == pytest.approx(expect, rel=1e-14)
        ratio = consts.K_par / consts.K_perp
        assert ratio == pytest.approx(consts.kpar0_over_n0 / consts.kperp0_over_n0,
                                      rel=1e-12)

    def test_edge_values(self):
        kpar, kperp = edge_conductivities(iter_params())
        assert round_sig(kpar) == pytest.approx(4.7e-5)
        assert kperp == pytest.approx(8e-10, rel=0.05)  # quoted at one digit

    def test_axis_normalization(self):
        c = braginskii_constants(iter_params())
        kpar, kperp = edge_conductivities(iter_params(), T_b=1.0, B_edge=1.0)
        assert kpar == pytest.approx(c.K_par)
        assert kperp == pytest.approx(c.K_perp)

    def test_anisotropy_span(self):
        c = braginskii_constants(iter_params())
        kpar_e, kperp_e = edge_conductivities(iter_params())
        hi = c.K_par / c.K_perp            # axis anisotropy
        lo = kpar_e / c.K_perp             # weakest parallel over strongest perp
        assert 1e14 < hi < 1e15            # ~15 orders of magnitude
        assert 1e4 < lo < 1e7              # ~5 orders at the edge

    def test_b0_scaling(self):
        base = braginskii_constants(iter_params())
        double = braginskii_constants(PlasmaParams(B0=2 * 5.42))
        assert double.t_A == pytest.approx(base.t_A / 2, rel=1e-12)
        assert double.K_perp == pytest.approx(base.K_perp / 8, rel=1e-12)
        # kappa_perp ~ 1/omega_i^2 and t_perp enters K_perp with t_A ~ 1/B0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            braginskii_constants(PlasmaParams(n0=0.0))


class TestLimiter:
    def test_high_temperature_limit(self):
        # T >> T_l: f -> T_l, kappa -> 8.8e3 * 0.1^2.5
        m = KappaModel("braginskii_limited", K_par=8.8e3)
        val = limited_kappa_par(1.0, m)
        assert val == pytest.approx(8.8e3 * 0.1 ** 2.5, rel=1e-6)
        assert val == pytest.approx(27.8, rel=2e-3)

    def test_low_temperature_limit(self):
        # tail bound: |f(T) - T| = sigma log1p(exp(-10)) at T = T_l - 10 sigma
        T = 0.1 - 10 * 0.04
        dev = abs(limiter_f(T, 0.1, 0.04) - T)
        assert dev <= 0.04 * math.exp(-10.0) * 1.0000001
        assert dev / abs(T) < 1e-5

    def test_at_limit(self):
        assert limiter_f(0.1, 0.1, 0.04) == pytest.approx(0.1 - 0.04 * math.log(2),
                                                          abs=1e-15)

    def test_monotone_and_bounded(self):
        T = np.linspace(-0.5, 1.5, 4001)
        f = limiter_f(T, 0.1, 0.04)
        assert (np.diff(f) >= 0).all()
        strict = T[:-1] < 0.6  # saturates to exactly T_l in double beyond that
        assert (np.diff(f)[strict] > 0).all()
        assert (f < np.minimum(T, 0.1) + 0.04 * math.log(2) + 1e-15).all()

    def test_smooth_second_derivative(self):
        h = 1e-5
        T = np.linspace(0.0, 0.2, 101)
        d2 = (limiter_f(T + h, 0.1, 0.04) - 2 * limiter_f(T, 0.1, 0.04)
              + limiter_f(T - h, 0.1, 0.04)) / h ** 2
        assert np.abs(d2).max() < 10.0  # bounded near the limiter knee

    def test_overflow_safe(self):
        f = limiter_f(np.array([-1e8, 1e8]), 0.1, 0.04)
        assert np.isfinite(f).all()

    def test_clamp_counter(self):
        m = KappaModel("braginskii_limited", K_par=1.0)
        clamp_counter["count"] = 0
        limited_kappa_par(np.array([-5.0, -2.0, 0.5]), m)
        assert clamp_counter["count"] == 2

    def test_derivative_matches_finite_difference(self):
        m = KappaModel("braginskii_limited", K_par=8.8e3)
        coeff = kappa_par_coefficient(m)
        T = np.linspace(0.01, 0.5, 40)
        h = 1e-6
        fd = (limited_kappa_par(T + h, m) - limited_kappa_par(T - h, m)) / (2 * h)
        np.testing.assert_allclose(coeff.dT(None, None, T), fd, rtol=1e-6)

    def test_constant_mode(self):
        m = KappaModel("constant", K_par=3.5)
        assert limited_kappa_par(0.123, m) == 3.5

    def test_rejects_bad_model(self):
        with pytest.raises(ValueError):
            KappaModel("linear")
        with pytest.raises(ValueError):
            KappaModel("braginskii_limited", sigma_limit=0.0)
