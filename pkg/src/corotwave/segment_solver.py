"""Picard solvers for the self-similar ODE on the four intervals.

Each solver iterates the variation-of-parameters integral equation of its
interval until the sup-norm of the update drops below ``cfg.tol``. The
integrals are cumulative spectral integrals on a cell mesh in a coordinate
in which the solution is smooth:

* interior  [0, 1/2]    : a itself
* subcone   [1/2, 1)    : s = -log(1 - a)
* supercone (1, a_hi]   : s = -log(a - 1)
* far field [2, A_max]  : log(1/a), plus one cell in z = 1/a down to z = 0

so the (1 -+ a) log|1 -+ a| terms at the cone are entire functions of s and
the far-field integral is taken all the way to a = infinity.

Published nodes are the cell edges. Values are stored as a base value plus a
deviation (``q_base + q_dev``) so that the deviation keeps full relative
precision right up to the cone, where Q tends to a nonzero limit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from . import basis
from ._mesh import CellMesh, graded_tail_edges, uniform_edges

# The integrals to the cone are carried down to |a - 1| = INNER_GAP; below that
# the integrands are O(|log x|) and contribute below rounding level.
INNER_GAP = 1e-30


class Mode(enum.Enum):
    SMALL = "small"
    LARGE = "large"


class SolverError(RuntimeError):
    stage = "segment"


class DivergedIterationError(SolverError):
    def __init__(self, msg, ratio):
        super().__init__(msg)
        self.ratio = ratio


class RejectedParameterError(ValueError):
    pass


class BootstrapViolationError(SolverError):
    def __init__(self, msg, worst):
        super().__init__(msg)
        self.worst = worst


class OutOfIntervalError(ValueError):
    pass


@dataclass(frozen=True)
class PicardConfig:
    """Mesh and iteration settings shared by all segment solvers.

    mesh_points       published cells per segment (nodes = mesh_points + 1)
    grading_exponent  growth factor of the unpublished cells that carry the
                      cone integrals from endpoint_offset down to 1e-30
    cell_order        Lobatto nodes per cell (odd, so cells have a midpoint)
    """

    mesh_points: int = 1000
    grading_exponent: float = 1.5
    endpoint_offset: float = 1e-10
    tol: float = 1e-12
    max_iter: int = 100
    farfield_cutoff: float = 1e3
    small_bound: float = 0.2
    cell_order: int = 13
    large_c: float = 1.0
    bootstrap_constant: float = 1.0
    large_threshold: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.endpoint_offset > 0:
            raise ValueError("endpoint_offset must be positive")
        if not self.farfield_cutoff > 2:
            raise ValueError("farfield_cutoff must exceed 2")
        if self.mesh_points < 8:
            raise ValueError("mesh_points must be at least 8")
        if self.grading_exponent < 1:
            raise ValueError("grading_exponent must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.cell_order < 5 or self.cell_order % 2 == 0:
            raise ValueError("cell_order must be odd and >= 5")


@dataclass(frozen=True)
class ShootingParams:
    d0: float = 0.0
    d1: float = 0.0
    d2: float = 0.0
    d3: float = 0.0
    d1t: float = 0.0
    d2t: float = 0.0
    d3t: float = 0.0
    q1: float = 0.0
    q2: float = 0.0
    mode: Mode = Mode.SMALL

    def check(self, small_bound=0.2, tol=1e-12):
        if abs(math.sin(4 * self.d3) - 4 * self.d2) > tol:
            raise ValueError("sin(4 d3) != 4 d2")
        if abs(math.sin(4 * self.d3t) - 4 * self.d2t) > tol:
            raise ValueError("sin(4 d3t) != 4 d2t")
        names = ["d0", "d1", "d2", "d3", "d2t", "d3t", "q1", "q2"]
        if self.mode is Mode.SMALL:
            names.append("d1t")
        for n in names:
            if abs(getattr(self, n)) > small_bound:
                raise ValueError(f"{n} exceeds the smallness bound {small_bound}")

    def as_dict(self):
        d = {k: getattr(self, k) for k in ("d0", "d1", "d2", "d3", "d1t", "d2t", "d3t", "q1", "q2")}
        d["mode"] = self.mode.value
        return d


@dataclass(frozen=True)
class ConvergenceReport:
    iterations: int
    final_update_supnorm: float
    contraction_ratio: float
    update_history: tuple = ()
    interp_error: float = 0.0
    extra: dict = field(default_factory=dict)


# coordinate kinds for interpolation and finite differences
LINEAR = "linear"              # sigma = a
LOG_GAP_LEFT = "log_gap_left"  # sigma = -log(expm1(lam (1 - a))), lam = 2 log 2
LOG_GAP_RIGHT = "log_gap_right"  # sigma = log x + k x/(1 + x), x = a - 1
LOG_A = "log_a"                # sigma = log(a)


# Softplus map for the subcone: linear near a = 1/2 (sigma = 0), logarithmic at
# the cone. A plain -log(1 - a) puts the a = 0 singularity only log 2 away in
# sigma, which spoils finite differences at the a = 1/2 end.
LAM_LEFT = 2.0 * math.log(2.0)


def _sigma(kind, gap, k=0.0):
    gap = np.asarray(gap, dtype=float)
    if kind == LINEAR:
        return 1.0 + gap
    if kind == LOG_GAP_LEFT:
        return -np.log(np.expm1(-LAM_LEFT * gap))
    if kind == LOG_GAP_RIGHT:
        return np.log(gap) + k * gap / (1.0 + gap)
    if kind == LOG_A:
        return np.log1p(gap)
    raise ValueError(kind)


def _gap_right(sigma, k=0.0):
    """Inverse of sigma = log x + k x/(1 + x) (monotone in x)."""
    sigma = np.asarray(sigma, dtype=float)
    if k == 0.0:
        return np.exp(sigma)
    lo = np.full_like(sigma, -80.0)
    hi = np.minimum(sigma, 20.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        e = np.exp(mid)
        f = mid + k * e / (1.0 + e) - sigma
        lo = np.where(f < 0, mid, lo)
        hi = np.where(f < 0, hi, mid)
        if np.all(hi - lo < 1e-15 * np.maximum(1.0, np.abs(mid))):
            break
    u = 0.5 * (lo + hi)
    for _ in range(3):
        e = np.exp(u)
        f = u + k * e / (1.0 + e) - sigma
        u = u - f / (1.0 + k * e / (1.0 + e) ** 2)
    return np.exp(u)


def _map_derivs(kind, gap, k=0.0):
    """(da/dsigma, d2a/dsigma2) at the given gaps."""
    gap = np.asarray(gap, dtype=float)
    if kind == LINEAR:
        return np.ones_like(gap), np.zeros_like(gap)
    if kind == LOG_GAP_LEFT:
        # x = log1p(exp(-sigma)) / lam, a = 1 - x
        e = np.expm1(-LAM_LEFT * gap)          # exp(-sigma)
        da = e / (LAM_LEFT * (1.0 + e))
        return da, -e / (LAM_LEFT * (1.0 + e) ** 2)
    if kind == LOG_GAP_RIGHT:
        x = gap
        ds = 1.0 / x + k / (1.0 + x) ** 2
        da = 1.0 / ds
        return da, da**3 * (1.0 / (x * x) + 2.0 * k / (1.0 + x) ** 3)
    if kind == LOG_A:
        a = 1.0 + gap
        return a, a
    raise ValueError(kind)


def ode_second_derivative(q, qp, a, gap):
    """Q'' from the ODE, with 1 - a^2 = -gap (2 + gap)."""
    one_m_a2 = -gap * (2.0 + gap)
    return (np.sin(2.0 * q) / (a * a) - (2.0 / a - 2.0 * a) * qp) / one_m_a2


@dataclass(frozen=True, eq=False)
class SegmentSolution:
    """Converged profile on one interval.

    ``gap`` is a - 1 carried at full precision; ``q_dev`` is Q - q_base.
    """

    interval: tuple
    region: basis.Region
    kind: str
    gap: np.ndarray
    q_base: float
    q_dev: np.ndarray
    qprime: np.ndarray
    params: dict
    convergence: ConvergenceReport
    label: str = ""
    map_k: float = 0.0

    def __post_init__(self):
        for arr in (self.gap, self.q_dev, self.qprime):
            arr.setflags(write=False)
        if np.any(np.diff(self.gap) <= 0):
            raise ValueError("nodes must be strictly increasing")

    @property
    def nodes(self):
        return 1.0 + self.gap

    @property
    def q_values(self):
        return self.q_base + self.q_dev

    @cached_property
    def _splines(self):
        sig = _sigma(self.kind, self.gap, self.map_k)
        da, _ = _map_derivs(self.kind, self.gap, self.map_k)
        a = self.nodes
        qpp = np.zeros_like(self.gap)
        ok = (np.abs(self.gap) > 0) & (a > 0)
        if np.any(ok):
            qpp[ok] = ode_second_derivative(self.q_values[ok], self.qprime[ok], a[ok], self.gap[ok])
        # the only excluded node in practice is the regular origin, where Q''(0) = 0
        sq = CubicHermiteSpline(sig, self.q_dev, self.qprime * da)
        sp = CubicHermiteSpline(sig, self.qprime, qpp * da)
        return sq, sp

    def contains_gap(self, gap):
        gap = np.asarray(gap, dtype=float)
        lo, hi = self.gap[0], self.gap[-1]
        span = hi - lo
        return (gap >= lo - 1e-14 * abs(span)) & (gap <= hi + 1e-14 * abs(span))

    def evaluate_gap(self, gap):
        """(Q, Q') at a = 1 + gap."""
        g = np.asarray(gap, dtype=float)
        if not np.all(self.contains_gap(g)):
            raise OutOfIntervalError(f"a outside [{self.interval[0]}, {self.interval[1]}]")
        g = np.clip(g, self.gap[0], self.gap[-1])
        sig = _sigma(self.kind, g, self.map_k)
        sq, sp = self._splines
        q = self.q_base + sq(sig)
        qp = sp(sig)
        if g.ndim == 0:
            return float(q), float(qp)
        return q, qp

    def evaluate_dev(self, gap):
        """Q - q_base at a = 1 + gap (keeps precision near the cone)."""
        g = np.clip(np.asarray(gap, dtype=float), self.gap[0], self.gap[-1])
        return self._splines[0](_sigma(self.kind, g, self.map_k))

    def cone_limit(self):
        """Extrapolated one-sided value at a = 1 from the last nodes.

        Fits the deviation against {1, x, x log x} on the 8 nodes nearest the
        cone; meaningful only for the two cone-adjacent segments.
        """
        if self.kind == LOG_GAP_LEFT:
            idx = slice(-8, None)
        elif self.kind == LOG_GAP_RIGHT:
            idx = slice(0, 8)
        else:
            raise ValueError("segment does not touch the cone")
        x = np.abs(self.gap[idx])
        A = np.column_stack([np.ones_like(x), x, x * np.log(x)])
        coef, *_ = np.linalg.lstsq(A, self.q_dev[idx], rcond=None)
        return self.q_base + coef[0]


def evaluate(seg: SegmentSolution, a):
    """(Q, Q') at a by piecewise-cubic Hermite interpolation."""
    a = np.asarray(a, dtype=float)
    lo, hi = seg.interval
    if np.any(a < lo - 1e-14) or np.any(a > hi + 1e-14):
        raise OutOfIntervalError(f"a outside [{lo}, {hi}]")
    return seg.evaluate_gap(a - 1.0)


# ---------------------------------------------------------------------------
# Picard driver
# ---------------------------------------------------------------------------

def _iterate(update, w0, cfg, stage):
    """Run w <- update(w) to tolerance; returns (w, aux, report fields)."""
    w = w0
    history = []
    aux = None
    for it in range(1, cfg.max_iter + 1):
        w_new, aux = update(w)
        if not np.all(np.isfinite(w_new)):
            raise DivergedIterationError(f"{stage}: non-finite iterate", float("inf"))
        delta = float(np.max(np.abs(w_new - w)))
        history.append(delta)
        w = w_new
        if delta <= cfg.tol:
            break
        if len(history) >= 4 and all(history[-k] > history[-k - 1] for k in (1, 2, 3)):
            ratio = history[-1] / history[-2]
            raise DivergedIterationError(f"{stage}: Picard iteration is not contracting", ratio)
    else:
        ratio = history[-1] / history[-2] if len(history) > 1 else float("inf")
        raise DivergedIterationError(
            f"{stage}: no convergence in {cfg.max_iter} iterations (last update {history[-1]:.3e})",
            ratio,
        )
    if len(history) >= 2 and history[-2] > 0:
        ratio = history[-1] / history[-2]
    else:
        ratio = 0.0
    if ratio >= 1.0:
        raise DivergedIterationError(f"{stage}: contraction ratio {ratio:.3g} >= 1", ratio)
    return w, aux, len(history), history


def _finish(label, region, kind, interval, mesh, npub, gap, q_base, q_dev, qp, params, it, hist, extra, k=0.0):
    """Package published nodes (edges of the first npub cells) into a SegmentSolution."""
    sub = slice(0, npub)
    g = np.concatenate([gap[sub, 0], gap[npub - 1:npub, -1]])
    qd = np.concatenate([q_dev[sub, 0], q_dev[npub - 1:npub, -1]])
    qpv = np.concatenate([qp[sub, 0], qp[npub - 1:npub, -1]])
    order = np.argsort(g)
    g, qd, qpv = g[order], qd[order], qpv[order]
    # interpolation error: Hermite on published nodes vs the spectral nodes at cell midpoints
    sig = _sigma(kind, g, k)
    da, _ = _map_derivs(kind, g, k)
    spl = CubicHermiteSpline(sig, qd, qpv * da)
    mid = mesh.p // 2
    gm = gap[sub, mid]
    interp_err = float(np.max(np.abs(spl(_sigma(kind, gm, k)) - q_dev[sub, mid]))) if npub else 0.0
    ratio = hist[-1] / hist[-2] if len(hist) >= 2 and hist[-2] > 0 else 0.0
    rep = ConvergenceReport(
        iterations=it,
        final_update_supnorm=hist[-1] if hist else 0.0,
        contraction_ratio=ratio,
        update_history=tuple(hist),
        interp_error=interp_err,
        extra=extra,
    )
    return SegmentSolution(
        interval=interval, region=region, kind=kind, gap=g, q_base=float(q_base),
        q_dev=qd, qprime=qpv, params=params, convergence=rep, label=label, map_k=k,
    )


def _check_small(cfg, **vals):
    for k, v in vals.items():
        if not np.isfinite(v) or abs(v) > cfg.small_bound:
            raise RejectedParameterError(f"|{k}| = {abs(v):.3g} exceeds the smallness bound {cfg.small_bound}")


MAX_PUBLISHED_STEP = 0.02


def _cone_mesh(cfg, x_hi, left=False, k=0.0):
    """Mesh from gap x_hi down to INNER_GAP; the first ``npub`` cells are published.

    The coordinate is s = -sigma, with sigma the softplus map on the left and
    log x + k x/(1 + x) on the right. Returns (mesh, npub).
    """
    if left:
        tos = lambda x: -math.log(math.expm1(LAM_LEFT * x))  # noqa: E731
    else:
        tos = lambda x: -(math.log(x) + k * x / (1.0 + x))  # noqa: E731
    s0 = tos(x_hi)
    s_pub = tos(cfg.endpoint_offset)
    npub = max(cfg.mesh_points, int(math.ceil((s_pub - s0) / MAX_PUBLISHED_STEP))) if k else cfg.mesh_points
    pub = uniform_edges(s0, s_pub, npub)
    ds = pub[1] - pub[0]
    tail = graded_tail_edges(s_pub, tos(INNER_GAP), ds, cfg.grading_exponent)
    edges = np.concatenate([pub, tail[1:]])
    return CellMesh(edges, cfg.cell_order), npub


# ---------------------------------------------------------------------------
# interior [0, 1/2]
# ---------------------------------------------------------------------------

def solve_interior(d0: float, cfg: PicardConfig = PicardConfig()) -> SegmentSolution:
    """Q = d0 phi0 + int_0^a G(a,b) H(Q(b)) db on [0, 1/2]."""
    _check_small(cfg, d0=d0)
    mesh = CellMesh(uniform_edges(0.0, 0.5, cfg.mesh_points), cfg.cell_order)
    a = mesh.s
    origin = a == 0.0
    a_safe = np.where(origin, 0.25, a)
    x = 1.0 - a_safe
    phi1, phi2, dphi1, dphi2 = basis._interior(a_safe, x, derivatives=True)
    phi0 = np.where(origin, 0.0, 0.75 * phi2)
    dphi0 = np.where(origin, 1.0, 0.75 * dphi2)
    one_m_a2 = (1.0 - a) * (1.0 + a)
    lin = d0 * phi0

    def update(q):
        n = np.asarray(basis.forcing_numerator(q))
        f1 = np.where(origin, 0.0, n / (a_safe * a_safe))
        f2 = phi2 * n / one_m_a2
        f2 = np.where(origin, 0.0, f2)
        I1 = mesh.cumulative(f1)
        I2 = mesh.cumulative(f2)
        qn = lin + 0.25 * phi2 * I1 - 0.25 * phi1 * I2
        qn = np.where(origin, 0.0, qn)
        return qn, (I1, I2)

    if d0 == 0.0:
        q = np.zeros_like(a)
        it, hist = 0, [0.0]
        I1 = I2 = np.zeros_like(a)
    else:
        q, (I1, I2), it, hist = _iterate(update, lin.copy(), cfg, "interior")
        # aux integrals belong to the previous iterate; refresh once more at the fixed point
        _, (I1, I2) = update(q)
    qp = d0 * dphi0 + 0.25 * dphi2 * I1 - 0.25 * dphi1 * I2
    qp = np.where(origin, d0, qp)
    h = q - lin
    extra = {"h_over_d0cube_a2": float(np.max(np.abs(h[~origin]) / (a[~origin] ** 2))) / d0**3 if d0 else 0.0}
    params = {"d0": d0}
    return _finish("interior", basis.Region.INTERIOR, LINEAR, (0.0, 0.5), mesh, mesh.ncell,
                   a - 1.0, 0.0, q, qp, params, it, hist, extra)


# ---------------------------------------------------------------------------
# subcone [1/2, 1)
# ---------------------------------------------------------------------------

def d3_from_d2(d2):
    if abs(4.0 * d2) > 1.0:
        raise basis.DomainError("arcsin domain: |4 d2| > 1")
    return math.asin(4.0 * d2) / 4.0


def solve_subcone(d1: float, d2: float, cfg: PicardConfig = PicardConfig(), *, flip_sign=False) -> SegmentSolution:
    """Q = V + Q1 on [1/2, 1) with V = d1 phi1 + d2 phi2 + (d3 - d2) 2/a.

    ``flip_sign`` reverses the orientation of the integral term; it exists
    only to demonstrate that this orientation fails the ODE residual.
    """
    _check_small(cfg, d1=d1, d2=d2)
    d3 = d3_from_d2(d2)
    mesh, npub = _cone_mesh(cfg, 0.5, left=True)
    e = np.exp(-mesh.s)
    x = np.log1p(e) / LAM_LEFT
    a = 1.0 - x
    jac = e / (LAM_LEFT * (1.0 + e))   # da/ds
    phi1, phi2, dphi1, dphi2 = basis._interior(a, x, derivatives=True)
    Lg = basis._log_ratio_interior(a, x)
    # V - 2 d3, written without cancellation
    vdev = d1 * phi1 + d2 * phi1 * Lg + 2.0 * d3 * x / a
    dv = d1 * dphi1 + d2 * dphi2 - 2.0 * (d3 - d2) / (a * a)
    sgn = -1.0 if flip_sign else 1.0

    def update(q1):
        w = vdev + q1
        nsub = 2.0 * np.cos(4.0 * d3 + w) * np.sin(w) - 2.0 * w + 4.0 * (d3 - d2) * x / a
        R1 = mesh.reverse_cumulative(nsub / (a * a) * jac)
        R2 = mesh.reverse_cumulative(phi2 * nsub / (x * (2.0 - x)) * jac)
        return sgn * (-0.25 * phi2 * R1 + 0.25 * phi1 * R2), (R1, R2)

    zero = np.zeros_like(a)
    if d1 == 0.0 and d2 == 0.0:
        q1, R1, R2, it, hist = zero, zero, zero, 0, [0.0]
    else:
        q1, _, it, hist = _iterate(update, zero, cfg, "subcone")
        _, (R1, R2) = update(q1)
    qp = dv + sgn * (-0.25 * dphi2 * R1 + 0.25 * dphi1 * R2)
    qdev = vdev + q1
    env = _remainder_envelope(x[:npub], q1[:npub])
    extra = {"q1_envelope": env, "d3": d3}
    params = {"d1": d1, "d2": d2, "d3": d3}
    seg = _finish("subcone", basis.Region.INTERIOR, LOG_GAP_LEFT, (0.5, 1.0), mesh, npub,
                  -x, 2.0 * d3, qdev, qp, params, it, hist, extra)
    return seg


def _remainder_envelope(x, q1):
    w = (x * np.log(x)) ** 2
    ok = w > 0
    return float(np.max(np.abs(q1[ok]) / w[ok])) if np.any(ok) else 0.0


# ---------------------------------------------------------------------------
# supercone (1, a_hi]
# ---------------------------------------------------------------------------

def large_ell(d1t, c):
    return c / math.sqrt(d1t)


def solve_supercone(d1t: float, d2t: float, cfg: PicardConfig = PicardConfig(), *, mode=None,
                    flip_sign=False, check_bootstrap=True) -> SegmentSolution:
    """Q = V~ + Q~1 on (1, a_hi] with V~ = d1t phi1~ + d2t phi2~ - (d3t - d2t) 2/a.

    Small mode uses a_hi = 2; large mode (d1t >= cfg.large_threshold unless
    ``mode`` says otherwise) uses a_hi = 1 + c d1t^(-1/2).
    """
    if mode is None:
        mode = Mode.LARGE if d1t >= cfg.large_threshold else Mode.SMALL
    mode = Mode(mode)
    if mode is Mode.SMALL:
        _check_small(cfg, d1t=d1t, d2t=d2t)
        x_hi = 1.0
    else:
        _check_small(cfg, d2t=d2t)
        if not d1t >= cfg.large_threshold:
            raise RejectedParameterError("large mode needs d1t >= 1")
        x_hi = large_ell(d1t, cfg.large_c)
    d3t = d3_from_d2(d2t)
    k = float(d1t) if mode is Mode.LARGE else 0.0
    mesh, npub = _cone_mesh(cfg, x_hi, k=k)
    x = _gap_right(-mesh.s, k)
    a = 1.0 + x
    jac, _ = _map_derivs(LOG_GAP_RIGHT, x, k)   # da/dsigma, sigma = -s
    phi1, phi2, dphi1, dphi2 = basis._exterior(a, x, derivatives=True)
    Lg = basis._log_ratio_exterior(a, x)
    vdev = d1t * phi1 + d2t * phi1 * Lg + 2.0 * d3t * x / a     # V~ + 2 d3t
    dv = d1t * dphi1 + d2t * dphi2 + 2.0 * (d3t - d2t) / (a * a)
    sgn = -1.0 if flip_sign else 1.0

    def update(q1):
        w = vdev + q1
        n = 2.0 * np.cos(w - 4.0 * d3t) * np.sin(w) - 2.0 * w + 4.0 * (d3t - d2t) * x / a
        R1 = mesh.reverse_cumulative(n / (a * a) * jac)
        R2 = mesh.reverse_cumulative(-phi2 * n / (x * (2.0 + x)) * jac)
        return sgn * (-0.25 * phi2 * R1 - 0.25 * phi1 * R2), (R1, R2)

    zero = np.zeros_like(a)
    if d1t == 0.0 and d2t == 0.0:
        q1, R1, R2, it, hist = zero, zero, zero, 0, [0.0]
    else:
        q1, _, it, hist = _iterate(update, zero, cfg, "supercone")
        _, (R1, R2) = update(q1)
    qp = dv + sgn * (-0.25 * dphi2 * R1 - 0.25 * dphi1 * R2)
    qdev = vdev + q1
    xs, qs = x[:npub], q1[:npub]
    env = _remainder_envelope(xs, qs)
    extra = {"q1_envelope": env, "d3t": d3t, "mode": mode.value, "a_hi": 1.0 + x_hi}
    if mode is Mode.LARGE:
        worst = env / d1t
        extra["bootstrap_ratio"] = worst
        extra["ell"] = x_hi
        if check_bootstrap and worst > cfg.bootstrap_constant:
            raise BootstrapViolationError(
                f"supercone: |Q1/((a-1)^2 log^2(a-1))| / d1t = {worst:.3g} exceeds {cfg.bootstrap_constant}", worst)
    params = {"d1t": d1t, "d2t": d2t, "d3t": d3t}
    return _finish("supercone", basis.Region.EXTERIOR, LOG_GAP_RIGHT, (1.0, 1.0 + x_hi), mesh, npub,
                   x, -2.0 * d3t, qdev, qp, params, it, hist, extra, k=k)


def calibrate_large_c(cfg: PicardConfig = PicardConfig(), d1ts=(10.0, 100.0, 1000.0), d2t=0.0, max_halvings=6):
    """Largest c in {1, 1/2, 1/4, ...} whose supercone solves pass the bootstrap bound."""
    from dataclasses import replace

    c = 1.0
    for _ in range(max_halvings + 1):
        ok = True
        for d in d1ts:
            try:
                solve_supercone(d, d2t, replace(cfg, large_c=c), mode=Mode.LARGE)
            except (BootstrapViolationError, DivergedIterationError):
                ok = False
                break
        if ok:
            return c
        c *= 0.5
    raise BootstrapViolationError("no admissible c found", float("nan"))


# ---------------------------------------------------------------------------
# far field [2, A_max]
# ---------------------------------------------------------------------------

def _farfield_basis(z):
    lz = np.log1p(-z) - np.log1p(z)      # log((a-1)/(a+1))
    p1 = (1.0 - z) * (1.0 + z)
    p2 = -2.0 * z + p1 * lz
    dp1 = 2.0 * z**3
    dp2 = 4.0 * z * z + 2.0 * z**3 * lz
    return p1, p2, dp1, dp2


def solve_farfield(q1: float, q2: float, cfg: PicardConfig = PicardConfig()) -> SegmentSolution:
    """Q = q1 phi1~ + q2 phi2~ + int_a^inf G~(a,b) H(Q(b)) db, computed in z = 1/a.

    The integral runs over the whole half line, so there is no truncation at
    A_max; A_max only bounds the published nodes.
    """
    _check_small(cfg, q1=q1, q2=q2)
    zmin = 1.0 / cfg.farfield_cutoff
    tail = CellMesh(np.array([0.0, zmin]), cfg.cell_order)
    main = CellMesh(uniform_edges(math.log(zmin), math.log(0.5), cfg.mesh_points), cfg.cell_order)
    zt = tail.s
    zm = np.exp(main.s)
    bt = _farfield_basis(zt)
    bm = _farfield_basis(zm)

    def integrals(qt, qm):
        out = []
        for mesh, z, (p1, p2, _, _), q, jac in ((tail, zt, bt, qt, 1.0), (main, zm, bm, qm, zm)):
            n = np.asarray(basis.forcing_numerator(q))
            out.append((n * jac, p2 * n / ((z - 1.0) * (z + 1.0)) * jac))
        (g1t, g2t), (g1m, g2m) = out
        I1t, I2t = tail.cumulative(g1t), tail.cumulative(g2t)
        I1m = main.cumulative(g1m, offset=I1t[-1, -1])
        I2m = main.cumulative(g2m, offset=I2t[-1, -1])
        return (I1t, I2t), (I1m, I2m)

    def dev(b, z, I1, I2):
        p1, p2, _, _ = b
        return -q1 * z * z + q2 * p2 + 0.25 * p2 * I1 + 0.25 * p1 * I2

    nt = zt.size

    def update(w):
        qt = q1 + w[:nt].reshape(zt.shape)
        qm = q1 + w[nt:].reshape(zm.shape)
        (I1t, I2t), (I1m, I2m) = integrals(qt, qm)
        wn = np.concatenate([dev(bt, zt, I1t, I2t).ravel(), dev(bm, zm, I1m, I2m).ravel()])
        return wn, None

    w0 = np.concatenate([dev(bt, zt, 0.0, 0.0).ravel(), dev(bm, zm, 0.0, 0.0).ravel()])
    if q1 == 0.0 and q2 == 0.0:
        w, it, hist = np.zeros_like(w0), 0, [0.0]
    else:
        w, _, it, hist = _iterate(update, w0, cfg, "farfield")
    qt = q1 + w[:nt].reshape(zt.shape)
    qm = q1 + w[nt:].reshape(zm.shape)
    (I1t, I2t), (I1m, I2m) = integrals(qt, qm)
    _, _, dp1, dp2 = bm
    qp = q1 * dp1 + q2 * dp2 + 0.25 * dp2 * I1m + 0.25 * dp1 * I2m
    qdev = w[nt:].reshape(zm.shape)
    a = 1.0 / zm
    # nodes ordered by z increasing = a decreasing; _finish sorts by gap
    # beyond A_max: contribution of the z-tail cell to the integrals
    extra = {"tail_I1": float(I1t[-1, -1]), "tail_I2": float(I2t[-1, -1]), "truncation_error": 0.0}
    params = {"q1": q1, "q2": q2}
    return _finish("farfield", basis.Region.EXTERIOR, LOG_A, (2.0, cfg.farfield_cutoff), main, main.ncell,
                   a - 1.0, q1, qdev, qp, params, it, hist, extra)


# ---------------------------------------------------------------------------
# large-mode outward extension [1 + ell, A_max]
# ---------------------------------------------------------------------------

def extend_outward(seg: SegmentSolution, cfg: PicardConfig = PicardConfig(), rtol=1e-13) -> SegmentSolution:
    """Integrate the ODE from the outer end of ``seg`` to A_max with DOP853.

    The independent variable is sigma = log x + k x/(1 + x) (k taken from the
    seeding segment), which keeps the phase of sin(2Q) per published node
    bounded when Q grows like d1t.
    """
    k = seg.map_k
    g0 = float(seg.gap[-1])
    q0 = float(seg.q_values[-1])
    p0 = float(seg.qprime[-1])
    s0 = float(_sigma(LOG_GAP_RIGHT, g0, k))
    s1 = float(_sigma(LOG_GAP_RIGHT, cfg.farfield_cutoff - 1.0, k))
    n = max(cfg.mesh_points, int(math.ceil((s1 - s0) / MAX_PUBLISHED_STEP)))
    sig = np.linspace(s0, s1, n + 1)
    gap = _gap_right(sig, k)
    gap[0] = g0

    # integrate in u = log(a - 1); report at the nodes that are uniform in sigma
    u_nodes = np.log(gap)

    def rhs(u, y):
        g = math.exp(u)
        q, qp = y
        return [g * qp, g * ode_second_derivative(q, qp, 1.0 + g, g)]

    sol = solve_ivp(rhs, (u_nodes[0], u_nodes[-1]), [q0, p0], method="DOP853", t_eval=u_nodes,
                    rtol=rtol, atol=rtol * max(1.0, abs(q0)))
    if not sol.success:
        raise SolverError(f"extension: {sol.message}")
    rep = ConvergenceReport(iterations=int(sol.nfev), final_update_supnorm=0.0, contraction_ratio=0.0,
                            update_history=(), interp_error=0.0, extra={"method": "DOP853", "rtol": rtol})
    return SegmentSolution(interval=(1.0 + g0, cfg.farfield_cutoff), region=basis.Region.EXTERIOR,
                           kind=LOG_GAP_RIGHT, gap=gap, q_base=0.0, q_dev=sol.y[0].copy(),
                           qprime=sol.y[1].copy(), params={"from": seg.label}, convergence=rep,
                           label="extension", map_k=k)


# ---------------------------------------------------------------------------
# sampled profiles and the ODE residual
# ---------------------------------------------------------------------------

def segment_from_function(func, dfunc, a_lo, a_hi, n=2000, label="sampled"):
    """Wrap a closed-form profile, sampled uniformly in a, as a SegmentSolution."""
    a = np.linspace(a_lo, a_hi, n + 1)
    gap = a - 1.0
    rep = ConvergenceReport(0, 0.0, 0.0)
    region = basis.Region.INTERIOR if a_hi <= 1 else basis.Region.EXTERIOR
    return SegmentSolution(interval=(a_lo, a_hi), region=region, kind=LINEAR, gap=gap, q_base=0.0,
                           q_dev=np.asarray(func(a), float), qprime=np.asarray(dfunc(a), float),
                           params={}, convergence=rep, label=label)


@dataclass(frozen=True)
class ResidualProfile:
    a: np.ndarray
    gap: np.ndarray
    residual: np.ndarray

    def sup(self, a_lo=-np.inf, a_hi=np.inf, gap_min=0.0):
        m = (self.a >= a_lo) & (self.a <= a_hi) & (np.abs(self.gap) >= gap_min)
        return float(np.max(self.residual[m])) if np.any(m) else 0.0


_D1 = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
_D2 = np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]) / 180.0


def ode_residual(seg: SegmentSolution, endpoint_offset: float = 1e-10) -> ResidualProfile:
    """|(1-a^2)Q'' + (2/a - 2a)Q' - sin(2Q)/a^2| by 6th-order centered differences.

    Differences are taken in the segment's uniform coordinate and mapped to a
    with the exact chain rule. The three nodes at each end and nodes within
    10 * endpoint_offset of a = 1 are skipped.
    """
    g = seg.gap
    n = g.size
    if n < 7:
        return ResidualProfile(np.array([]), np.array([]), np.array([]))
    sig = _sigma(seg.kind, g, seg.map_k)
    h = (sig[-1] - sig[0]) / (n - 1)
    D = seg.q_dev
    core = slice(3, n - 3)
    d1 = sum(c * D[3 + k - 3:n - 3 + k - 3] for k, c in enumerate(_D1)) / h
    d2 = sum(c * D[3 + k - 3:n - 3 + k - 3] for k, c in enumerate(_D2)) / (h * h)
    gc = g[core]
    ad, add = _map_derivs(seg.kind, gc, seg.map_k)
    qa = d1 / ad
    qaa = (d2 - d1 * add / ad) / (ad * ad)
    a = 1.0 + gc
    one_m_a2 = -gc * (2.0 + gc)
    q = seg.q_base + D[core]
    res = np.abs(one_m_a2 * qaa + (2.0 / a - 2.0 * a) * qa - np.sin(2.0 * q) / (a * a))
    keep = np.abs(gc) > 10.0 * endpoint_offset
    return ResidualProfile(a[keep], gc[keep], res[keep])
