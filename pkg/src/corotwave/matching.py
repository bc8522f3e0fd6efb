"""Connection problems at a = 1/2, a = 2 and the light cone; global profile assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import segment_solver as ss
from .segment_solver import Mode, PicardConfig, SegmentSolution, ShootingParams


class MatchingError(RuntimeError):
    stage = "matching"


class NewtonError(MatchingError):
    pass


class SingularJacobianError(MatchingError):
    pass


class BracketError(MatchingError):
    pass


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-12
    accept: float = 1e-10
    max_steps: int = 50
    rel_step: float = 1e-6
    max_halvings: int = 20


@dataclass(frozen=True)
class NewtonReport:
    iterations: int
    residual_history: tuple
    jacobian: tuple
    determinant: float
    condition: float


def fd_jacobian(F, p, rel_step=1e-6):
    p = np.asarray(p, dtype=float)
    cols = []
    for i in range(p.size):
        h = rel_step * max(1.0, abs(p[i]))
        e = np.zeros_like(p)
        e[i] = h
        cols.append((np.asarray(F(p + e)) - np.asarray(F(p - e))) / (2.0 * h))
    return np.column_stack(cols)


def newton(F, p0, cfg: NewtonConfig = NewtonConfig(), stage="newton"):
    """Damped Newton with a centered finite-difference Jacobian."""
    p = np.asarray(p0, dtype=float)
    r = np.asarray(F(p))
    hist = [float(np.max(np.abs(r)))]
    it = 0
    while hist[-1] > cfg.tol and it < cfg.max_steps:
        J = fd_jacobian(F, p, cfg.rel_step)
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e13:
            raise SingularJacobianError(f"{stage}: singular Jacobian")
        dp = np.linalg.solve(J, -r)
        lam = 1.0
        for _ in range(cfg.max_halvings):
            pn = p + lam * dp
            rn = np.asarray(F(pn))
            if np.max(np.abs(rn)) < hist[-1]:
                break
            lam *= 0.5
        else:
            break            # no decrease possible: at the noise floor
        it += 1
        p, r = pn, rn
        hist.append(float(np.max(np.abs(r))))
    if hist[-1] > cfg.accept:
        raise NewtonError(f"{stage}: Newton stalled at residual {hist[-1]:.3e} after {it} steps")
    J = fd_jacobian(F, p, cfg.rel_step)
    rep = NewtonReport(it, tuple(hist), tuple(map(tuple, J)), float(np.linalg.det(J)), float(np.linalg.cond(J)))
    return p, rep


# ---------------------------------------------------------------------------
# connection at a = 1/2 and a = 2
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InteriorMatch:
    d1: float
    d2: float
    d3: float
    interior: SegmentSolution
    subcone: SegmentSolution
    report: NewtonReport

    def __iter__(self):
        return iter((self.d1, self.d2, self.d3))

    @property
    def residual(self):
        return self.report.residual_history[-1]


@dataclass(frozen=True, eq=False)
class ExteriorMatch:
    d1t: float
    d2t: float
    d3t: float
    supercone: SegmentSolution
    farfield: SegmentSolution
    report: NewtonReport

    def __iter__(self):
        return iter((self.d1t, self.d2t, self.d3t))

    @property
    def residual(self):
        return self.report.residual_history[-1]


def match_interior(d0: float, cfg: PicardConfig = PicardConfig(), ncfg: NewtonConfig = NewtonConfig()) -> InteriorMatch:
    """Find (d1, d2) so the subcone solution continues the interior one at a = 1/2."""
    inner = ss.solve_interior(d0, cfg)
    target = np.array([inner.q_values[-1], inner.qprime[-1]])
    cache = {}

    def solve(p):
        key = (float(p[0]), float(p[1]))
        if key not in cache:
            cache[key] = ss.solve_subcone(key[0], key[1], cfg)
        return cache[key]

    def F(p):
        s = solve(p)
        return np.array([s.q_values[0], s.qprime[0]]) - target

    # linear guess: d1 phi1 + d2 phi2 = d0 phi0 at a = 1/2 gives d1 = 0, d2 = 3 d0 / 4
    p, rep = newton(F, [0.0, 0.75 * d0], ncfg, stage="match_interior")
    sub = solve(p)
    return InteriorMatch(float(p[0]), float(p[1]), ss.d3_from_d2(p[1]), inner, sub, rep)


def match_exterior(q1: float, q2: float, cfg: PicardConfig = PicardConfig(),
                   ncfg: NewtonConfig = NewtonConfig(), guess=None) -> ExteriorMatch:
    """Find (d1t, d2t) so the supercone solution meets the far-field one at a = 2."""
    far = ss.solve_farfield(q1, q2, cfg)
    target = np.array([far.q_values[0], far.qprime[0]])
    cache = {}

    def solve(p):
        key = (float(p[0]), float(p[1]))
        if key not in cache:
            cache[key] = ss.solve_supercone(key[0], key[1], cfg, mode=Mode.SMALL)
        return cache[key]

    def F(p):
        s = solve(p)
        return np.array([s.q_values[-1], s.qprime[-1]]) - target

    p, rep = newton(F, [q1, q2] if guess is None else guess, ncfg, stage="match_exterior")
    sup = solve(p)
    return ExteriorMatch(float(p[0]), float(p[1]), ss.d3_from_d2(p[1]), sup, far, rep)


# ---------------------------------------------------------------------------
# global profile
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConeExpansion:
    """Q0 = C1 |a^2-1|/a^2 + C2 (|a^2-1|/a^2) log(|a-1|/(a+1)) + C3 (2/a) + Q4.

    C1, C2 are the left (a < 1) coefficients; the right side has its own pair.
    """

    C1: float
    C2: float
    C3: float
    Q4_envelope: float
    C1_right: float = 0.0
    C2_right: float = 0.0
    window: tuple = (1e-7, 1e-2)

    def evaluate(self, gap):
        """R + C3 Q3 at a = 1 + gap (gap != 0)."""
        gap = np.asarray(gap, dtype=float)
        a = 1.0 + gap
        x = np.abs(gap)
        left = gap < 0
        p = np.where(left, x * (2.0 - x), x * (2.0 + x)) / (a * a)
        lg = np.log(x) - np.log(np.where(left, 2.0 - x, 2.0 + x))
        c1 = np.where(left, self.C1, self.C1_right)
        c2 = np.where(left, self.C2, self.C2_right)
        return c1 * p + c2 * p * lg + self.C3 * 2.0 / a

    def evaluate_R(self, gap):
        gap = np.asarray(gap, dtype=float)
        return self.evaluate(gap) - self.C3 * 2.0 / (1.0 + gap)

    def evaluate_prime(self, gap):
        """d/da of R + C3 Q3."""
        gap = np.asarray(gap, dtype=float)
        a = 1.0 + gap
        x = np.abs(gap)
        left = gap < 0
        lg = np.log(x) - np.log(np.where(left, 2.0 - x, 2.0 + x))
        p = np.where(left, x * (2.0 - x), x * (2.0 + x)) / (a * a)
        # d/da of (1 - a^2)/a^2 is -2/a^3 on both sides (sign of |.| flips with side)
        dp = np.where(left, -2.0, 2.0) / a**3
        dlg = 2.0 / ((a - 1.0) * (a + 1.0))
        c1 = np.where(left, self.C1, self.C1_right)
        c2 = np.where(left, self.C2, self.C2_right)
        return c1 * dp + c2 * (dp * lg + p * dlg) - self.C3 * 2.0 / (a * a)


@dataclass(frozen=True)
class FarField:
    limit: float
    coeff: float
    remainder_envelope: float

    def __iter__(self):
        return iter((self.limit, self.coeff, self.remainder_envelope))


@dataclass(frozen=True, eq=False)
class GlobalProfile:
    segments: tuple
    params: ShootingParams
    cone_trace: dict
    cone_expansion: ConeExpansion | None = None
    farfield: FarField | None = None
    matching: dict = field(default_factory=dict)

    @property
    def mode(self):
        return self.params.mode

    @property
    def a_max(self):
        return self.segments[-1].interval[1]

    @property
    def continuity_residual(self):
        return abs(self.cone_trace["Q_left_limit"] - self.cone_trace["Q_right_limit"])

    def _segment_index(self, gap):
        edges = np.array([s.gap[-1] for s in self.segments[:-1]])
        idx = np.searchsorted(edges, gap, side="left")
        # a gap equal to an interior edge belongs to the lower segment; cone gaps go by sign
        idx = np.where((gap > 0) & (idx < 2), 2, idx)
        return idx

    def evaluate_gap(self, gap):
        """(Q0, Q0') at a = 1 + gap."""
        g = np.asarray(gap, dtype=float)
        flat = np.atleast_1d(g).ravel()
        q = np.empty_like(flat)
        qp = np.empty_like(flat)
        idx = self._segment_index(flat)
        for k, seg in enumerate(self.segments):
            m = idx == k
            if np.any(m):
                q[m], qp[m] = seg.evaluate_gap(flat[m])
        if g.ndim == 0:
            return float(q[0]), float(qp[0])
        return q.reshape(g.shape), qp.reshape(g.shape)

    def evaluate(self, a):
        return self.evaluate_gap(np.asarray(a, dtype=float) - 1.0)

    def max_abs_on(self, gap_lo, gap_hi):
        """Max |Q| over published nodes with gap in [gap_lo, gap_hi]."""
        best = 0.0
        for s in self.segments:
            m = (s.gap >= gap_lo) & (s.gap <= gap_hi)
            if np.any(m):
                best = max(best, float(np.max(np.abs(s.q_values[m]))))
        return best


def _bracket_root(f, center, width, stage, grow=2.0, tries=30):
    lo, hi = center - width, center + width
    flo, fhi = f(lo), f(hi)
    for _ in range(tries):
        if flo == 0.0:
            return lo, lo
        if fhi == 0.0:
            return hi, hi
        if flo * fhi < 0:
            return lo, hi
        width *= grow
        lo, hi = center - width, center + width
        flo, fhi = f(lo), f(hi)
    raise BracketError(f"{stage}: could not bracket a root around {center}")


def glue_at_cone(d0: float, mode="small", d1t=None, q1: float = 0.0, cfg: PicardConfig = PicardConfig(),
                 ncfg: NewtonConfig = NewtonConfig(), continuity_tol=1e-8) -> GlobalProfile:
    """Assemble Q0 on (0, A_max] with 2 d3 = -2 d3t at the cone.

    Small mode: q1 is a free input; q2 is chosen so the matched d2t equals -d2.
    Large mode: d1t >= 1 is fixed; d2t is chosen on the supercone trace and the
    solution is continued outward by integrating the ODE.
    """
    mode = Mode(mode)
    im = match_interior(d0, cfg, ncfg)
    d2 = im.d2
    left_limit = im.subcone.cone_limit()
    matching = {
        "half_value": abs(im.interior.q_values[-1] - im.subcone.q_values[0]),
        "half_derivative": abs(im.interior.qprime[-1] - im.subcone.qprime[0]),
        "interior_newton": im.report,
    }
    if mode is Mode.SMALL:
        if d1t is not None:
            raise ValueError("d1t is determined by q1 in small mode")
        last = {}

        def g(q2):
            guess = None if not last else [last["m"].d1t, last["m"].d2t]
            m = match_exterior(q1, q2, cfg, ncfg, guess=guess)
            last["m"] = m
            last[q2] = m
            return m.d2t + d2

        if d2 == 0.0 and g(0.0) == 0.0:
            q2 = 0.0
        else:
            lo, hi = _bracket_root(g, -d2, max(1e-3 * abs(d2), 1e-12), "glue_at_cone")
            q2 = lo if lo == hi else brentq(g, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=100)
        em = last.get(q2) or match_exterior(q1, q2, cfg, ncfg)
        sup, outer = em.supercone, em.farfield
        params = ShootingParams(d0, im.d1, im.d2, im.d3, em.d1t, em.d2t, em.d3t, q1, q2, Mode.SMALL)
        matching.update({
            "two_value": abs(sup.q_values[-1] - outer.q_values[0]),
            "two_derivative": abs(sup.qprime[-1] - outer.qprime[0]),
            "exterior_newton": em.report,
        })
    else:
        if d1t is None or not d1t >= cfg.large_threshold:
            raise ss.RejectedParameterError("large mode needs d1t >= 1")
        sols = {}

        def h(d2t):
            s = ss.solve_supercone(d1t, d2t, cfg, mode=Mode.LARGE)
            sols[d2t] = s
            return s.cone_limit() - left_limit

        if d2 == 0.0 and h(0.0) == 0.0:
            d2t = 0.0
        else:
            lo, hi = _bracket_root(h, -d2, max(1e-3 * abs(d2), 1e-12), "glue_at_cone")
            d2t = lo if lo == hi else brentq(h, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=100)
        sup = sols.get(d2t) or ss.solve_supercone(d1t, d2t, cfg, mode=Mode.LARGE)
        outer = ss.extend_outward(sup, cfg)
        params = ShootingParams(d0, im.d1, im.d2, im.d3, d1t, d2t, ss.d3_from_d2(d2t), 0.0, 0.0, Mode.LARGE)
        matching.update({"ell": sup.convergence.extra["ell"], "two_value": 0.0, "two_derivative": 0.0})
    trace = {"Q_left_limit": left_limit, "Q_right_limit": sup.cone_limit(),
             "two_d3": 2.0 * params.d3, "minus_two_d3t": -2.0 * params.d3t}
    prof = GlobalProfile((im.interior, im.subcone, sup, outer), params, trace, matching=matching)
    if prof.continuity_residual > continuity_tol:
        raise MatchingError(f"glue_at_cone: continuity residual {prof.continuity_residual:.3e}")
    ce = extract_cone_expansion(prof)
    ff = extract_farfield(prof)
    if mode is Mode.LARGE:
        params = ShootingParams(**{**params.as_dict(), "mode": Mode.LARGE, "q1": ff.limit, "q2": -ff.coeff / 4.0})
    return GlobalProfile(prof.segments, params, trace, ce, ff, matching)


# ---------------------------------------------------------------------------
# coefficient extraction
# ---------------------------------------------------------------------------

def _cone_basis(gap):
    a = 1.0 + gap
    x = np.abs(gap)
    left = gap < 0
    p = np.where(left, x * (2.0 - x), x * (2.0 + x)) / (a * a)
    lg = np.log(x) - np.log(np.where(left, 2.0 - x, 2.0 + x))
    return p, p * lg, 2.0 / a


def fit_cone_expansion(func, window=(1e-7, 1e-2), samples=60) -> ConeExpansion:
    """Weighted least squares of Q against the cone basis on both sides.

    ``func(gap)`` returns Q at a = 1 + gap. The fit shares C3 between the two
    sides and gives each side its own (C1, C2).
    """
    lo, hi = window
    if not 0 < lo < hi:
        raise FitError("bad window")
    if hi / lo < 10:
        raise FitError("cone fit window too narrow: basis functions nearly collinear")
    d = np.geomspace(lo, hi, samples)
    gaps = np.concatenate([-d[::-1], d])
    q = np.asarray(func(gaps), dtype=float)
    p, pl, q3 = _cone_basis(gaps)
    left = gaps < 0
    A = np.column_stack([p * left, pl * left, p * ~left, pl * ~left, q3])
    w = 1.0 / (np.abs(gaps) * (1.0 + np.abs(np.log(np.abs(gaps)))))
    Aw = A * w[:, None]
    cond = np.linalg.cond(Aw)
    if not np.isfinite(cond) or cond > 1e12:
        raise FitError(f"cone fit ill-conditioned (cond = {cond:.2e})")
    coef, *_ = np.linalg.lstsq(Aw, q * w, rcond=None)
    rem = q - A @ coef
    x = np.abs(gaps)
    env = float(np.max(np.abs(rem) / (x * np.log(x)) ** 2))
    c1l, c2l, c1r, c2r, c3 = (float(c) for c in coef)
    return ConeExpansion(c1l, c2l, c3, env, c1r, c2r, (lo, hi))


def extract_cone_expansion(p: GlobalProfile, window=(1e-7, 1e-2)) -> ConeExpansion:
    if p.continuity_residual > 1e-8:
        raise FitError("profile is not continuous at the cone")
    return fit_cone_expansion(lambda g: p.evaluate_gap(g)[0], window)


def extract_farfield(p: GlobalProfile) -> FarField:
    """Fit Q = c1 + c2/a on the last decade before A_max."""
    outer = p.segments[-1]
    a_max = outer.interval[1]
    if a_max < 100:
        raise FitError("far-field fit needs A_max >= 100")
    a = outer.nodes
    m = a >= a_max / 10.0
    if np.count_nonzero(m) < 8:
        raise FitError("far-field window has too few nodes")
    a = a[m]
    q = outer.q_values[m]
    A = np.column_stack([np.ones_like(a), 1.0 / a])
    coef, *_ = np.linalg.lstsq(A, q, rcond=None)
    env = float(np.max(a * a * np.abs(q - A @ coef)))
    return FarField(float(coef[0]), float(coef[1]), env)
