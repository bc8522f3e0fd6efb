import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corotwave import approx as ap


class TestCutoff:
    @given(st.floats(0.1, 5.0), st.floats(-20, 20))
    @settings(max_examples=60, deadline=None)
    def test_range_and_support(self, C, x):
        cut = ap.CutoffSpec(C)
        v = float(cut.chi(x))
        assert 0.0 <= v <= 1.0
        if abs(x) <= C:
            assert v == 0.0
        if abs(x) >= 2 * C:
            assert v == 1.0

    def test_derivative_fd(self):
        cut = ap.CutoffSpec(0.7)
        x = np.linspace(-1.5, 1.5, 41)
        x = x[np.abs(np.abs(x) - 1.05) < 0.3]
        h = 1e-6
        fd = (cut.chi(x + h) - cut.chi(x - h)) / (2 * h)
        assert np.allclose(cut.chi_prime(x), fd, atol=1e-6)
        fd2 = (cut.chi_prime(np.abs(x) + h) - cut.chi_prime(np.abs(x) - h)) / (2 * h)
        assert np.allclose(cut.chi_second(x), fd2, atol=1e-5)

    def test_max_slope(self):
        cut = ap.CutoffSpec(2.0)
        x = np.linspace(2, 4, 20001)
        assert abs(np.max(cut.chi_prime(x)) - cut.max_slope) < 1e-8

    def test_bad_width(self):
        with pytest.raises(ValueError):
            ap.CutoffSpec(0.0)


class TestField:
    def test_inner_region_is_cone_term(self, small_field):
        t = 10.0
        r = np.linspace(t - 0.99, t + 0.99, 31)
        u, _ = small_field.evaluate(t, r)
        assert np.allclose(u, small_field.C3 * 2 * t / r, atol=1e-10, rtol=0)

    def test_outer_region_is_profile(self, small_field, small_profile):
        t = 10.0
        r = np.concatenate([np.linspace(0.5, t - 2.01, 20), np.linspace(t + 2.01, 40, 20)])
        u, ut = small_field.evaluate(t, r)
        q, qp = small_profile.evaluate(r / t)
        assert np.allclose(u, q, atol=1e-10, rtol=0)
        assert np.allclose(ut, -(r / t**2) * qp, atol=1e-10, rtol=0)

    def test_axis_and_range(self, small_field):
        assert small_field.evaluate(5.0, 0.0) == (0.0, 0.0)
        with pytest.raises(ap.EvaluationRangeError):
            small_field.evaluate(-1.0, 1.0)
        with pytest.raises(ap.EvaluationRangeError):
            small_field.evaluate(1.0, 1e4)

    def test_time_derivative_fd(self, small_field):
        t, h = 10.0, 1e-5
        r = np.array([3.0, 8.5, 9.5, 10.5, 11.5, 20.0])
        up, _ = small_field.evaluate(t + h, r)
        um, _ = small_field.evaluate(t - h, r)
        _, ut = small_field.evaluate(t, r)
        assert np.allclose(ut, (up - um) / (2 * h), atol=1e-9)

    def test_residual_vanishes_outside_strip(self, small_field):
        t = 10.0
        r = np.array([2.0, 5.0, 7.9, 12.1, 20.0])
        assert np.max(np.abs(small_field.residual(t, r))) < 1e-8


class TestResidual:
    def test_fd_matches_analytic(self, small_field):
        # points away from the cutoff kinks at |t - r| in {C, 2C}
        t = 10.0
        r = np.array([8.5, 8.3, 11.5, 11.7, 9.5, 10.5])
        a = small_field.residual(t, r)
        fd = ap.residual_e0_fd(small_field, t, r, h_r=5e-3, h_t=5e-3)
        assert np.allclose(fd, a, rtol=1e-3, atol=1e-10)

    def test_step_guard(self, small_field):
        with pytest.raises(ap.StepError):
            ap.residual_e0_fd(small_field, 10.0, 9.0, h_r=0.2)
        with pytest.raises(ap.StepError):
            ap.residual_e0_fd(small_field, 10.0, 0.1)

    def test_dispatch(self, small_field):
        assert ap.residual_e0(small_field, 10.0, 8.5) == small_field.residual(10.0, 8.5)
        with pytest.raises(ValueError):
            ap.residual_e0(small_field, 10.0, 8.5, method="spectral")

    def test_norms_positive(self, small_field):
        n = ap.residual_norms(small_field, 10.0)
        assert n.l2 > 0 and n.strip_sup > 0
        with pytest.raises(ap.EvaluationRangeError):
            ap.residual_norms(small_field, 1.5)

    def test_norm_quadrature_converged(self, small_field):
        a = ap.residual_norms(small_field, 20.0, nodes_per_piece=32).l2
        b = ap.residual_norms(small_field, 20.0, nodes_per_piece=64).l2
        assert abs(a - b) <= 1e-6 * b


class TestDecayFit:
    ts = np.geomspace(10, 1000, 12)

    def test_power(self):
        p, r2 = ap.decay_fit(self.ts, 3.0 * self.ts**-2.0)
        assert abs(p + 2) < 1e-12 and r2 > 0.999999

    def test_constant(self):
        p, r2 = ap.decay_fit(self.ts, np.full(self.ts.size, 0.5))
        assert abs(p) < 1e-12 and r2 == 1.0

    def test_noisy(self):
        rng = np.random.default_rng(7)
        v = self.ts**-3.0 * (1 + 0.01 * rng.standard_normal(self.ts.size))
        p, r2 = ap.decay_fit(self.ts, v)
        assert abs(p + 3) < 0.05 and r2 > 0.99

    def test_errors(self):
        with pytest.raises(ValueError):
            ap.decay_fit([1, 2, 3], [1, 2, 3])
        with pytest.raises(ValueError):
            ap.decay_fit(self.ts, -self.ts)


class TestCriticalNorm:
    def test_transform_gaussian(self):
        r = np.linspace(0, 12, 6001)
        k = np.array([0.3, 1.0, 2.5])
        got = ap.radial_transform(r, np.exp(-r**2), k)
        exact = math.pi**1.5 * np.exp(-k**2 / 4)
        assert np.allclose(got, exact, rtol=1e-8)

    def test_gaussian_stabilizes(self):
        r = np.linspace(0, 12, 4001)
        N = ap.critical_norm_scan(r, np.exp(-r**2), np.geomspace(1e-3, 1e-1, 5), 2.0)
        assert np.all(np.diff(N) <= 0)
        assert abs(N[0] - N[1]) <= 1e-6 * N[0]

    def test_inverse_r_log_growth(self):
        R = 1e5
        r = ap.graded_radial_grid(10.0, 0.05, R, 4.0)
        u = np.zeros_like(r)
        u[1:] = ap.smooth_window(r[1:], R, 0.2 * R) / r[1:]
        kmins = np.geomspace(1e-3, 1e-2, 10)
        N = ap.critical_norm_scan(r, u, kmins, 1e-1, s=0.5)
        slope, r2 = ap.log_fit(np.log(1 / kmins), N)
        # |u_hat| = 4 pi / k^2 gives N^2 = 8 log(k_max / k_min)
        assert r2 > 0.99
        assert abs(slope - 8.0) < 0.05 * 8.0

    def test_scaling(self):
        r = np.linspace(0, 12, 2001)
        u = np.exp(-r**2)
        a = ap.critical_norm_band(r, u, 1e-2, 2.0)
        b = ap.critical_norm_band(r, -3.0 * u, 1e-2, 2.0)
        assert abs(b - 9.0 * a) <= 1e-12 * b   # the band integral is the squared norm

    def test_zero(self):
        r = np.linspace(0, 10, 200)
        assert ap.critical_norm_band(r, np.zeros_like(r), 0.01, 1.0) == 0.0

    def test_aliasing(self):
        r = np.linspace(0, 100, 51)
        with pytest.raises(ap.AliasingError):
            ap.critical_norm_scan(r, np.exp(-r), [0.1], 2.0)

    def test_graded_grid(self):
        r = ap.graded_radial_grid(5.0, 0.1, 100.0, 2.0)
        d = np.diff(r)
        assert r[0] == 0 and r[-1] == 100.0 and np.all(d > 0) and d.max() <= 2.0 + 1e-12
