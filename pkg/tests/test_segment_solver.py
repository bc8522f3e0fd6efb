import math

import mpmath as mp
import numpy as np
import pytest

from corotwave import basis
from corotwave import segment_solver as ss

CFG = ss.PicardConfig()


def mp_phi0_half():
    a = mp.mpf("0.5")
    return mp.mpf(3) / 4 * (2 / a + (1 - a**2) / a**2 * mp.log((1 - a) / (1 + a)))


class TestConfig:
    def test_defaults(self):
        assert CFG.endpoint_offset == 1e-10
        assert CFG.tol == 1e-12
        assert CFG.max_iter == 100
        assert CFG.farfield_cutoff == 1e3

    @pytest.mark.parametrize("kw", [{"tol": 0}, {"endpoint_offset": -1}, {"farfield_cutoff": 2.0},
                                    {"grading_exponent": 0.5}, {"max_iter": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ss.PicardConfig(**kw)

    def test_params_invariants(self):
        d2 = 0.01
        p = ss.ShootingParams(d2=d2, d3=ss.d3_from_d2(d2))
        p.check()
        with pytest.raises(ValueError):
            ss.ShootingParams(d2=0.01, d3=0.01).check()
        with pytest.raises(ValueError):
            ss.ShootingParams(d0=0.5).check()


class TestInterior:
    def test_zero(self):
        s = ss.solve_interior(0.0)
        assert np.all(s.q_values == 0)
        assert s.convergence.iterations <= 1

    def test_half_value(self):
        s = ss.solve_interior(0.01)
        q, _ = ss.evaluate(s, 0.5)
        assert abs(q - 0.00528122) < 1e-6
        assert abs(q - 0.01 * float(mp_phi0_half())) < 1e-6
        assert s.convergence.final_update_supnorm <= CFG.tol
        assert s.convergence.contraction_ratio < 1

    def test_regular_start(self):
        s = ss.solve_interior(0.05)
        assert s.nodes[0] == 0.0 and s.q_values[0] == 0.0
        assert abs(s.qprime[0] - 0.05) < 1e-12

    def test_cubic_scaling(self):
        defects = []
        for d0 in (0.025, 0.05, 0.1):
            s = ss.solve_interior(d0)
            defects.append(abs(ss.evaluate(s, 0.5)[0] - d0 * basis.phi0(0.5)))
        assert defects[2] <= 5e-3
        for lo, hi in zip(defects[:-1], defects[1:]):
            assert abs(lo / hi - 1 / 8) <= 0.2 / 8

    def test_h_bound(self):
        s = ss.solve_interior(0.1)
        a = s.nodes[1:]
        h = s.q_values[1:] - 0.1 * basis.phi0(a)
        assert np.max(np.abs(h) / (0.1**3 * a**2)) < 1.0

    def test_residual(self):
        s = ss.solve_interior(0.01)
        assert ss.ode_residual(s).sup(0.05, 0.45) < 1e-8

    def test_rejected(self):
        with pytest.raises(ss.RejectedParameterError):
            ss.solve_interior(0.5)

    def test_odd_symmetry(self):
        p, m = ss.solve_interior(0.03), ss.solve_interior(-0.03)
        assert np.max(np.abs(p.q_values + m.q_values)) < 1e-12

    def test_contraction_certificate(self):
        c = ss.solve_interior(0.1).convergence
        hist = c.update_history
        assert len(hist) >= 3
        ratios = [b / a for a, b in zip(hist[:-1], hist[1:]) if a > 0]
        assert all(r < 1 for r in ratios)

    def test_nonconvergence_reported(self):
        with pytest.raises(ss.SolverError):
            ss.solve_interior(0.1, ss.PicardConfig(max_iter=1))


class TestSubcone:
    def test_zero(self):
        s = ss.solve_subcone(0.0, 0.0)
        assert np.all(s.q_values == 0)

    def test_d3(self):
        assert abs(ss.d3_from_d2(0.01) - float(mp.asin(mp.mpf("0.04")) / 4)) < 1e-15
        assert abs(ss.d3_from_d2(0.01) - 0.01000267) < 1e-8

    def test_cone_trace(self):
        s = ss.solve_subcone(0.02, 0.01)
        d3 = ss.d3_from_d2(0.01)
        assert abs(s.cone_limit() - 2 * d3) < 1e-8
        # deviation from the trace bounded by K (1 - a)|log(1 - a)|
        x = -s.gap
        m = (x <= 0.01) & (x >= 1e-8)
        dev = np.abs(s.q_values[m] - 2 * d3)
        assert np.max(dev / (x[m] * np.abs(np.log(x[m])))) < 1.0

    def test_remainder_envelope(self):
        s = ss.solve_subcone(0.02, 0.01)
        env = s.convergence.extra["q1_envelope"]
        assert math.isfinite(env) and env < 1.0

    def test_remainder_exponent(self):
        # Q1 = Q - linear part is O((1-a)^2 log^2): fitted exponent >= 1.8
        d1, d2 = 0.02, 0.01
        s = ss.solve_subcone(d1, d2)
        d3 = ss.d3_from_d2(d2)
        x = -s.gap
        m = (x <= 1e-3) & (x >= 1e-8)
        xm = x[m]
        a = 1 - xm
        p1 = xm * (2 - xm) / a**2
        # linear part minus the trace 2 d3, written without cancellation
        vdev = d1 * p1 + d2 * p1 * (np.log(xm) - np.log(2 - xm)) + 2 * d3 * xm / a
        q1 = s.q_dev[m] - vdev
        slope = np.polyfit(np.log(x[m]), np.log(np.abs(q1)), 1)[0]
        assert slope >= 1.8

    def test_residual(self):
        s = ss.solve_subcone(0.02, 0.01)
        r = ss.ode_residual(s)
        assert r.sup(gap_min=1e3 * CFG.endpoint_offset) < 1e-8
        assert r.sup() < 1e-6

    def test_printed_orientation_fails_residual(self):
        s = ss.solve_subcone(0.02, 0.01, flip_sign=True)
        assert ss.ode_residual(s).sup(gap_min=1e-7) > 1e-6

    def test_arcsin_domain(self):
        with pytest.raises((ValueError, ss.RejectedParameterError)):
            ss.solve_subcone(0.0, 0.3)


class TestSupercone:
    def test_zero(self):
        assert np.all(ss.solve_supercone(0.0, 0.0).q_values == 0)

    def test_cone_trace(self):
        s = ss.solve_supercone(0.02, 0.01)
        assert abs(s.cone_limit() + 0.02000534) < 1e-8
        assert abs(s.cone_limit() + 2 * ss.d3_from_d2(0.01)) < 1e-8
        assert s.interval[1] == 2.0

    def test_residual(self):
        s = ss.solve_supercone(0.02, 0.01)
        assert ss.ode_residual(s).sup(gap_min=1e3 * CFG.endpoint_offset) < 1e-8

    def test_printed_orientation_fails_residual(self):
        s = ss.solve_supercone(0.02, 0.01, flip_sign=True)
        assert ss.ode_residual(s).sup(gap_min=1e-7) > 1e-7

    def test_large_mode(self):
        s = ss.solve_supercone(100.0, 0.01)
        assert "ell" in s.convergence.extra
        ell = s.convergence.extra["ell"]
        assert abs(s.interval[1] - 1 - ell) < 1e-12
        qmax = np.max(np.abs(s.q_values))
        assert 3 <= qmax <= 30
        # bootstrap bound |Q1| <= C d1t holds a posteriori
        assert s.convergence.extra["bootstrap_ratio"] <= CFG.bootstrap_constant

    def test_large_residual_small_d(self):
        s = ss.solve_supercone(10.0, 0.01)
        assert ss.ode_residual(s).sup(gap_min=1e3 * CFG.endpoint_offset) < 1e-8

    def test_bootstrap_violation(self):
        with pytest.raises(ss.BootstrapViolationError):
            ss.solve_supercone(100.0, 0.01, ss.PicardConfig(large_c=8.0))

    def test_calibrated_c(self):
        assert ss.calibrate_large_c() == 1.0


class TestFarfield:
    def test_zero(self):
        assert np.all(ss.solve_farfield(0.0, 0.0).q_values == 0)

    def test_value_at_two(self):
        s = ss.solve_farfield(0.01, 0.01)
        q, _ = ss.evaluate(s, 2.0)
        p1, p2 = basis.phi_exterior(2.0)
        assert abs(q - (-0.0107396)) < 1e-5
        assert abs(q - (0.01 * p1 + 0.01 * p2)) < 1e-5

    def test_decay_of_remainder(self):
        q1, q2 = 0.01, 0.005
        s = ss.solve_farfield(q1, q2)
        a = s.nodes
        m = (a >= 10) & (a <= 1000)
        p1, p2 = basis.phi_exterior(a[m])
        env = np.max(a[m] ** 2 * np.abs(s.q_values[m] - q1 * p1 - q2 * p2))
        assert env < 1e-3

    def test_residual(self):
        s = ss.solve_farfield(0.01, 0.01)
        assert ss.ode_residual(s).sup() < 1e-10


class TestEvaluate:
    def test_nodes_exact(self):
        s = ss.solve_interior(0.05)
        i = len(s.nodes) // 3
        q, qp = ss.evaluate(s, s.nodes[i])
        assert q == s.q_values[i] and qp == s.qprime[i]

    def test_zero_midpoint(self):
        s = ss.solve_interior(0.0)
        assert ss.evaluate(s, 0.2345) == (0.0, 0.0)

    def test_out_of_interval(self):
        with pytest.raises(ss.OutOfIntervalError):
            ss.evaluate(ss.solve_interior(0.01), 0.7)

    def test_mesh_halving(self):
        fine = ss.solve_subcone(0.02, 0.01)
        coarse = ss.solve_subcone(0.02, 0.01, ss.PicardConfig(mesh_points=500))
        mid = 0.5 * (coarse.nodes[100:400:7] + coarse.nodes[101:401:7])
        diff = np.abs(ss.evaluate(coarse, mid)[0] - ss.evaluate(fine, mid)[0])
        assert np.max(diff) < 4 * max(coarse.convergence.interp_error, 1e-15)


class TestResidualOracle:
    def test_arctan(self):
        seg = ss.segment_from_function(lambda a: 2 * np.arctan(a), lambda a: 2 / (1 + a * a), 0.05, 0.95)
        assert ss.ode_residual(seg).sup(0.1, 0.9) < 1e-8

    def test_zero(self):
        seg = ss.segment_from_function(lambda a: 0 * a, lambda a: 0 * a, 0.1, 0.9)
        assert ss.ode_residual(seg).sup() == 0.0

    def test_detects_non_solution(self):
        seg = ss.segment_from_function(lambda a: np.arctan(a), lambda a: 1 / (1 + a * a), 0.05, 0.95)
        assert ss.ode_residual(seg).sup(0.1, 0.9) > 1e-2
