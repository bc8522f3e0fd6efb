"""Cutoff-regularized approximate solution u_approx(t, r), its residual e0 and norm diagnostics.

With tau = t - r and a = r/t,

    u_approx = chi(tau) A(a) + C3 Q3(a),    Q3 = 2/a,

where A = Q0 - C3 Q3 (the default, keeping the Q4 remainder) or A = R, the
fitted cone expansion without C3 Q3 (Q4 dropped). The residual is

    e0 = u_tt - u_rr - (2/r) u_r + sin(2 u)/r^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .matching import ConeExpansion, GlobalProfile


class AliasingError(ValueError):
    pass


class StepError(ValueError):
    pass


class EvaluationRangeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# cutoff
# ---------------------------------------------------------------------------

def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s**4 * (35.0 + s * (-84.0 + s * (70.0 - 20.0 * s)))


def _smoothstep_d1(s):
    s = np.clip(s, 0.0, 1.0)
    return 140.0 * s**3 * (1.0 - s) ** 3


def _smoothstep_d2(s):
    s = np.clip(s, 0.0, 1.0)
    return 420.0 * s**2 * (1.0 - s) ** 2 * (1.0 - 2.0 * s)


@dataclass(frozen=True)
class CutoffSpec:
    """chi(x) = 0 for |x| <= C, 1 for |x| >= 2C, degree-7 smoothstep in between."""

    width: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("cutoff width must be positive")

    def _s(self, x):
        return (np.abs(x) - self.width) / self.width

    def chi(self, x):
        return _smoothstep(self._s(np.asarray(x, dtype=float)))

    def chi_prime(self, x):
        x = np.asarray(x, dtype=float)
        return np.sign(x) * _smoothstep_d1(self._s(x)) / self.width

    def chi_second(self, x):
        x = np.asarray(x, dtype=float)
        return _smoothstep_d2(self._s(x)) / self.width**2

    @property
    def max_slope(self):
        return 35.0 / 16.0 / self.width


# ---------------------------------------------------------------------------
# approximate solution
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ApproxSolutionField:
    profile: GlobalProfile
    cutoff: CutoffSpec = field(default_factory=CutoffSpec)
    include_q4: bool = True

    @property
    def expansion(self) -> ConeExpansion:
        ce = self.profile.cone_expansion
        if ce is None:
            raise ValueError("profile has no cone expansion")
        return ce

    @property
    def C3(self):
        return self.expansion.C3

    @property
    def a_max(self):
        return self.profile.a_max

    def _check(self, t, r):
        if np.any(np.asarray(t) <= 0) or np.any(np.asarray(r) < 0):
            raise EvaluationRangeError("need t > 0 and r >= 0")

    def _parts(self, t, r):
        """chi, chi', chi'' at tau and A, A' at a, restricted to chi > 0."""
        t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
        self._check(t, r)
        tau = t - r
        a = r / t
        cut = self.cutoff
        chi = cut.chi(tau)
        A = np.zeros_like(a)
        Ap = np.zeros_like(a)
        m = (chi > 0) & (a > 0)
        if np.any(m):
            am = a[m]
            if np.any(am > self.a_max):
                raise EvaluationRangeError(f"a = r/t beyond the profile range {self.a_max}")
            gap = am - 1.0
            if self.include_q4:
                q, qp = self.profile.evaluate_gap(gap)
                A[m] = q - self.C3 * 2.0 / am
                Ap[m] = qp + self.C3 * 2.0 / am**2
            else:
                ce = self.expansion
                A[m] = ce.evaluate_R(gap)
                Ap[m] = ce.evaluate_prime(gap) + self.C3 * 2.0 / am**2
        return t, r, tau, a, chi, cut.chi_prime(tau), A, Ap, m

    def evaluate(self, t, r):
        """(u, u_t) with the exact chain rule; r = 0 gives (0, 0)."""
        t, r, tau, a, chi, dchi, A, Ap, _ = self._parts(t, r)
        with np.errstate(divide="ignore", invalid="ignore"):
            q3 = np.where(a > 0, 2.0 / a, 0.0)
            dq3 = np.where(a > 0, -2.0 / a**2, 0.0)
        # u = 0 at the axis (Q0(0) = 0); chi = 1 there for t >= 2C
        u = chi * A + self.C3 * q3
        ut = dchi * A - (a / t) * (chi * Ap + self.C3 * dq3)
        u = np.where(r > 0, u, 0.0)
        ut = np.where(r > 0, ut, 0.0)
        if u.ndim == 0:
            return float(u), float(ut)
        return u, ut

    def residual(self, t, r):
        """Semi-analytic e0 using the profile ODE.

        Q3 solves the linearized homogeneous equation with box(Q3(r/t)) = 0,
        box(Q0(r/t)) = -sin(2 Q0)/r^2, and chi(t - r) is a 1-D wave, so

            e0 = 2 chi' [A' (1 - a) + A/a]/t + chi box(A) + sin(2u)/r^2.
        """
        t, r, tau, a, chi, dchi, A, Ap, m = self._parts(t, r)
        if np.any(r <= 0):
            raise EvaluationRangeError("residual needs r > 0")
        u = chi * A + self.C3 * 2.0 / a
        boxA = np.zeros_like(a)
        if np.any(m):
            if self.include_q4:
                q, _ = self.profile.evaluate_gap(a[m] - 1.0)
                boxA[m] = -np.sin(2.0 * q) / r[m] ** 2
            else:
                # phi1 and phi1 log are homogeneous solutions of the linearized ODE
                boxA[m] = -2.0 * A[m] / r[m] ** 2
        e0 = 2.0 * dchi * (Ap * (1.0 - a) + A / a) / t + chi * boxA + np.sin(2.0 * u) / r**2
        return float(e0) if np.ndim(e0) == 0 else e0


def eval_uapprox(f: ApproxSolutionField, t, r):
    return f.evaluate(t, r)


# 6th-order centered second and first derivative stencils (7 points)
_D1_6 = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
_D2_6 = np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]) / 180.0
# 4th-order second derivative (5 points)
_D2_4 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def residual_e0_fd(f: ApproxSolutionField, t, r, h_r=None, h_t=None):
    """e0 by finite differences: 6th order in r, 4th order in t.

    Steps default to C/20. The cutoff is only C^3 at |t - r| in {C, 2C}, so
    near those lines the stencil error is O(h^3 |A|/C^4); use steps well
    below C/20 there when comparing against ``f.residual``.
    """
    C = f.cutoff.width
    h_r = C / 20.0 if h_r is None else h_r
    h_t = C / 20.0 if h_t is None else h_t
    if h_r > C / 20.0 or h_t > C / 20.0:
        raise StepError("FD steps must not exceed C/20")
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    if np.any(r <= 3 * h_r):
        raise StepError("r too close to the axis for the radial stencil")
    off_r = np.arange(-3, 4)
    off_t = np.arange(-2, 3)
    ur = np.stack([f.evaluate(t, r + k * h_r)[0] for k in off_r])
    ut = np.stack([f.evaluate(t + k * h_t, r)[0] for k in off_t])
    u = ur[3]
    u_r = np.tensordot(_D1_6, ur, axes=1) / h_r
    u_rr = np.tensordot(_D2_6, ur, axes=1) / h_r**2
    u_tt = np.tensordot(_D2_4, ut, axes=1) / h_t**2
    e0 = u_tt - u_rr - 2.0 * u_r / r + np.sin(2.0 * u) / r**2
    return float(e0) if np.ndim(e0) == 0 else e0


def residual_e0(f: ApproxSolutionField, t, r, method="analytic", **kw):
    if method == "analytic":
        return f.residual(t, r)
    if method == "fd":
        return residual_e0_fd(f, t, r, **kw)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# norms and fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualNorms:
    t: float
    l2: float
    strip_sup: float

    def as_dict(self):
        return {"t": self.t, "l2": self.l2, "strip_sup": self.strip_sup}


def _gauss_on(pieces, n):
    x, w = np.polynomial.legendre.leggauss(n)
    rs, ws = [], []
    for lo, hi in pieces:
        if hi <= lo:
            continue
        half = 0.5 * (hi - lo)
        rs.append(0.5 * (lo + hi) + half * x)
        ws.append(half * w)
    return np.concatenate(rs), np.concatenate(ws)


def residual_norms(f: ApproxSolutionField, t: float, nodes_per_piece: int = 48, strip_samples: int = 801,
                   method="analytic", **kw) -> ResidualNorms:
    """L2 norm of e0 (weight 4 pi r^2) over its support and sup over the transition strip.

    With Q4 kept e0 vanishes where chi = 1, so the support is |t - r| <= 2C;
    with Q4 dropped the integral covers all evaluable r.
    """
    C = f.cutoff.width
    if t <= 2 * C:
        raise EvaluationRangeError("need t > 2C")
    if f.include_q4:
        br = [t - 2 * C, t - C, t + C, t + 2 * C]
        pieces = []
        for lo, hi in zip(br[:-1], br[1:]):
            # subdivide so each Gauss panel has width <= C/4
            k = max(1, int(math.ceil((hi - lo) / (0.25 * C))))
            e = np.linspace(lo, hi, k + 1)
            pieces += list(zip(e[:-1], e[1:]))
    else:
        hi = min(f.a_max, 10.0) * t
        e = np.unique(np.concatenate([np.geomspace(0.05 * t, t - 2 * C, 64), np.linspace(t - 2 * C, t + 2 * C, 17),
                                      np.geomspace(t + 2 * C, hi, 64)]))
        pieces = list(zip(e[:-1], e[1:]))
    r, w = _gauss_on(pieces, nodes_per_piece)
    e0 = np.asarray(residual_e0(f, t, r, method, **kw))
    if not np.all(np.isfinite(e0)):
        raise ArithmeticError("quadrature failure: non-finite residual")
    l2 = math.sqrt(4.0 * math.pi * float(np.sum(w * e0**2 * r**2)))
    s = np.linspace(C, 2 * C, strip_samples)
    rs = np.concatenate([t - s, t + s])
    strip = float(np.max(np.abs(residual_e0(f, t, rs, method, **kw))))
    return ResidualNorms(float(t), l2, strip)


def decay_fit(ts, vals):
    """Slope of log(vals) against log(ts) and the coefficient of determination."""
    ts = np.asarray(ts, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if ts.size < 4 or ts.size != vals.size:
        raise ValueError("need at least 4 paired samples")
    if np.any(vals <= 0) or np.any(ts <= 0):
        raise ValueError("decay_fit needs positive values")
    x, y = np.log(ts), np.log(vals)
    slope, icpt = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + icpt)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(r2)


def log_fit(x, y):
    """Least-squares line y = slope * x + b with R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, icpt = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + icpt)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(r2)


# ---------------------------------------------------------------------------
# band-limited Sobolev norms of radial functions
# ---------------------------------------------------------------------------

def _trapezoid_weights(r):
    d = np.diff(r)
    w = np.zeros_like(r)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def radial_transform(r, u, k, chunk=64):
    """u_hat(k) = (4 pi / k) int u(r) sin(k r) r dr, trapezoid rule on the (possibly graded) grid."""
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=float)
    k = np.atleast_1d(np.asarray(k, dtype=float))
    g = _trapezoid_weights(r) * u * r
    out = np.empty(k.size)
    for i in range(0, k.size, chunk):
        kk = k[i:i + chunk]
        out[i:i + chunk] = np.sin(np.outer(kk, r)) @ g
    return 4.0 * math.pi * out / k


def graded_radial_grid(r_fine, h_fine, r_max, h_max, growth=1.02):
    """Uniform step h_fine on [0, r_fine], then steps growing geometrically up to h_max."""
    if not (0 < h_fine <= h_max and r_fine < r_max):
        raise ValueError("bad graded grid parameters")
    fine = np.arange(0.0, r_fine + 0.5 * h_fine, h_fine)
    pts = [fine]
    r, h = fine[-1], h_fine
    out = []
    while r < r_max:
        h = min(h * growth, h_max)
        r = min(r + h, r_max)
        out.append(r)
    pts.append(np.array(out))
    return np.concatenate(pts)


def critical_norm_scan(r, u, k_mins, k_max, s=1.5, per_decade=200):
    """N(k_min)^2 = kappa int_{k_min}^{k_max} k^{2s} |u_hat|^2 k^2 dk / (2 pi)^3 for each k_min.

    kappa = 4 pi (the solid angle), so N is the homogeneous H^s norm of the
    radial function restricted to the band. s = 3/2 is the critical index
    for the position component and s = 1/2 for the velocity component.
    """
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=float)
    if r.ndim != 1 or r.size != u.size or r.size < 16:
        raise ValueError("need matching 1-D samples")
    if r[0] < 0 or np.any(np.diff(r) <= 0):
        raise ValueError("radial samples must be increasing and start at r >= 0")
    k_mins = np.atleast_1d(np.asarray(k_mins, dtype=float))
    if np.any(k_mins <= 0) or np.any(k_mins >= k_max):
        raise ValueError("need 0 < k_min < k_max")
    h = float(np.max(np.diff(r)))
    if k_max * h > math.pi / 4:
        raise AliasingError(f"grid step {h} too coarse for k_max = {k_max}")
    lo = float(k_mins.min())
    n = max(32, int(per_decade * math.log10(k_max / lo)) + 1)
    logk = np.linspace(math.log(lo), math.log(k_max), n)
    k = np.exp(logk)
    uh = radial_transform(r, u, k)
    dens = 4.0 * math.pi * k ** (2 * s) * uh**2 * k**2 / (2 * math.pi) ** 3 * k   # dk = k dlogk
    # integral from each grid k up to k_max (trapezoid in log k)
    seg = 0.5 * (dens[1:] + dens[:-1]) * np.diff(logk)
    tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    return np.interp(np.log(k_mins), logk, tail)


def critical_norm_band(r, u, k_min, k_max, s=1.5):
    """N(k_min)^2 over the band [k_min, k_max]."""
    return float(critical_norm_scan(r, u, [k_min], k_max, s)[0])


def smooth_window(r, R, width):
    """1 for r <= R - width, 0 for r >= R, degree-7 smoothstep in between."""
    return 1.0 - _smoothstep((np.asarray(r, dtype=float) - (R - width)) / width)
