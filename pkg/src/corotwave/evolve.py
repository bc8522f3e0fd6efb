"""Finite-difference evolution of u_tt - u_rr - (2/r) u_r + sin(2u)/r^2 = 0.

Second order in space and time: the radial Laplacian is discretized as
(1/r) d^2(r u)/dr^2 with the standard three-point stencil and time stepping is
velocity Verlet (kick-drift-kick, algebraically the same as leapfrog).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .approx import ApproxSolutionField, residual_norms

CFL = 0.5
BLOWUP_THRESHOLD = 1e3


class BlowupError(RuntimeError):
    stage = "evolve"


class CFLError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class Origin(str, enum.Enum):
    ODD = "odd"      # u(0) = 0 held fixed (Dirichlet)
    EVEN = "even"    # regular even field: Laplacian -> 3 u_rr = 6 (u1 - u0)/h^2


@dataclass(frozen=True)
class RadialGrid:
    r_max: float
    n: int
    origin: Origin = Origin.ODD

    def __post_init__(self):
        if not self.r_max > 0 or self.n < 16:
            raise ValueError("need r_max > 0 and n >= 16")
        object.__setattr__(self, "origin", Origin(self.origin))

    @property
    def h(self):
        return self.r_max / self.n

    @property
    def r(self):
        return np.linspace(0.0, self.r_max, self.n + 1)

    def weights(self):
        """Trapezoid weights on [0, r_max]."""
        w = np.full(self.n + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w


@dataclass(frozen=True, eq=False)
class WaveState:
    t: float
    u: np.ndarray
    ut: np.ndarray
    blowup: bool = False


def laplacian(u, grid: RadialGrid):
    """Radial Laplacian (1/r)(r u)'' on interior nodes; node 0 by parity, last node 0."""
    r = grid.r
    h2 = grid.h**2
    out = np.zeros_like(u)
    ru = r * u
    out[1:-1] = (ru[2:] - 2.0 * ru[1:-1] + ru[:-2]) / (h2 * r[1:-1])
    if grid.origin is Origin.EVEN:
        out[0] = 6.0 * (u[1] - u[0]) / h2
    return out


def _nonlin(u, r):
    out = np.zeros_like(u)
    out[1:] = np.sin(2.0 * u[1:]) / r[1:] ** 2
    return out


def acceleration(u, grid: RadialGrid, nonlinear=True):
    acc = laplacian(u, grid)
    if nonlinear:
        acc -= _nonlin(u, grid.r)
    if grid.origin is Origin.ODD:
        acc[0] = 0.0
    acc[-1] = 0.0
    return acc


def _check_dt(dt, grid):
    if not 0 < dt <= CFL * grid.h * (1 + 1e-12):
        raise CFLError(f"dt = {dt} violates dt <= {CFL} h = {CFL * grid.h}")


def step(state: WaveState, dt: float, grid: RadialGrid, nonlinear=True, outer=None) -> WaveState:
    """One velocity-Verlet step; ``outer(t)`` optionally prescribes u at r_max."""
    _check_dt(dt, grid)
    v = state.ut + 0.5 * dt * acceleration(state.u, grid, nonlinear)
    u = state.u + dt * v
    t = state.t + dt
    if outer is not None:
        u[-1] = outer(t)
    v = v + 0.5 * dt * acceleration(u, grid, nonlinear)
    if outer is not None:
        v[-1] = (u[-1] - state.u[-1]) / dt
    blow = bool(state.blowup or not np.all(np.isfinite(u)) or np.max(np.abs(u)) > BLOWUP_THRESHOLD)
    return WaveState(t, u, v, blow)


def evolve(state: WaveState, t_end: float, grid: RadialGrid, nonlinear=True, outer=None, cfl=CFL):
    """Step from state.t to t_end with a fixed step that lands on t_end."""
    span = t_end - state.t
    nsteps = max(1, int(math.ceil(span / (cfl * grid.h) - 1e-9)))
    dt = span / nsteps
    acc = acceleration(state.u, grid, nonlinear)
    u, v, t = state.u.copy(), state.ut.copy(), state.t
    for i in range(nsteps):
        v += 0.5 * dt * acc
        u_old = u[-1]
        u += dt * v
        t = state.t + (i + 1) * dt
        if outer is not None:
            u[-1] = outer(t)
        acc = acceleration(u, grid, nonlinear)
        v += 0.5 * dt * acc
        if outer is not None:
            v[-1] = (u[-1] - u_old) / dt
        if not np.isfinite(u).all() or np.abs(u).max() > BLOWUP_THRESHOLD:
            return WaveState(t, u, v, True)
    return WaveState(t, u, v, False)


def energy(state: WaveState, grid: RadialGrid) -> float:
    """E = int (u_t^2 + u_r^2 + 2 sin^2 u / r^2) r^2 dr in the form the scheme conserves.

    With v = r u the stencil is v_tt = d^2 v - sin(2 v/r)/r, whose discrete
    energy is sum h (v_t^2 + 2 sin^2 u) + sum (v_{i+1} - v_i)^2 / h. The
    gradient part equals int r^2 u_r^2 dr up to the boundary term r u^2,
    which vanishes when u(r_max) = 0.
    """
    r = grid.r
    v = r * state.u
    grad = float(np.sum(np.diff(v) ** 2)) / grid.h
    # (2 sin^2 u / r^2) r^2 = 2 sin^2 u, finite at the axis
    dens = (state.ut * r) ** 2 + 2.0 * np.sin(state.u) ** 2
    return grad + float(np.sum(grid.weights() * dens))


# ---------------------------------------------------------------------------
# perturbations of u_approx
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationNorms:
    sup: float
    energy: float
    l2: float
    l2_5d: float

    def as_dict(self):
        return {"sup": self.sup, "energy": self.energy, "l2": self.l2, "l2_5d": self.l2_5d}


def eps_norms(eps, eps_t, grid: RadialGrid) -> PerturbationNorms:
    r = grid.r
    w = grid.weights()
    er = np.gradient(eps, grid.h, edge_order=2)
    en = math.sqrt(float(np.sum(w * (eps_t**2 + er**2) * r**2)))
    l2 = math.sqrt(float(np.sum(w * eps**2 * r**2)))
    v = np.zeros_like(eps)
    v[1:] = eps[1:] / r[1:]
    l2_5d = math.sqrt(float(np.sum(w * v**2 * r**4)))
    return PerturbationNorms(float(np.max(np.abs(eps))), en, l2, l2_5d)


def perturbation_norms(state: WaveState, f: ApproxSolutionField, grid: RadialGrid) -> PerturbationNorms:
    """Norms of eps = u - u_approx(t, .): sup, energy sqrt(int (eps_t^2 + eps_r^2) r^2),
    L2 with weight r^2 and the 5-D L2 of v = eps/r with weight r^4."""
    ua, uat = f.evaluate(state.t, grid.r)
    return eps_norms(state.u - ua, state.ut - uat, grid)


def bump(r, center, width):
    """(1 - s^2)^4 on |s| < 1, s = (r - center)/width."""
    s = (np.asarray(r, dtype=float) - center) / width
    return np.where(np.abs(s) < 1.0, (1.0 - s * s) ** 4, 0.0)


def bump_perturbation(grid: RadialGrid, T: float, C: float, delta1: float):
    """Position and velocity bumps in [T - C, T + C] with energy norm delta1."""
    b = bump(grid.r, T, C)
    if delta1 == 0:
        return np.zeros_like(b), np.zeros_like(b)
    n = eps_norms(b, b / C, grid).energy
    return delta1 * b / n, delta1 * (b / C) / n


@dataclass
class PersistenceReport:
    T: float
    delta1: float
    horizon: float
    times: list = field(default_factory=list)
    sup_eps: list = field(default_factory=list)
    energy_eps: list = field(default_factory=list)
    energy_total: list = field(default_factory=list)
    forcing_integral: list = field(default_factory=list)
    gamma_fit: float = float("nan")
    gamma_r2: float = float("nan")
    blowup: bool = False
    blowup_time: float | None = None
    persistent: bool = False
    bound_constant: float = float("nan")
    config: dict = field(default_factory=dict)

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class PersistenceConfig:
    cfl: float = CFL
    samples: int = 200
    gamma_max: float = 0.1
    bound_K: float = 10.0
    residual_fraction: float = 10.0


def _forced_accel(eps, t, f: ApproxSolutionField, grid: RadialGrid, active):
    """eps_tt = Lap eps - 2 cos(2 ua + eps) sin(eps)/r^2 - e0 on the causal region."""
    r = grid.r
    acc = laplacian(eps, grid)
    idx = slice(1, active)
    rr = r[idx]
    ua, _ = f.evaluate(t, rr)
    acc[idx] -= 2.0 * np.cos(2.0 * ua + eps[idx]) * np.sin(eps[idx]) / rr**2
    C = f.cutoff.width
    m = np.abs(t - rr) <= 2.0 * C
    if np.any(m):
        acc[idx][m] -= f.residual(t, rr[m])
    acc[0] = 0.0
    acc[active:] = 0.0
    return acc


def run_persistence(f: ApproxSolutionField, T: float, delta1: float, horizon_factor: float, grid: RadialGrid,
                    cfg: PersistenceConfig = PersistenceConfig(), progress=None) -> PersistenceReport:
    """Evolve u = u_approx + eps from t = T to horizon_factor * T.

    The perturbation eps obeys the forced equation

        eps_tt - Lap eps + [sin(2 ua + 2 eps) - sin(2 ua)]/r^2 = -e0,

    which is exact for u = u_approx + eps and avoids evolving the slowly
    decaying tail of u_approx against an artificial outer boundary.
    """
    C = f.cutoff.width
    t_end = horizon_factor * T
    if grid.origin is not Origin.ODD:
        raise ConfigurationError("persistence runs need the odd (Dirichlet) origin")
    if grid.r_max < t_end + 2 * C + 4 * grid.h:
        raise ConfigurationError("grid too short: the forced region reaches r_max within the horizon")
    if T <= 2 * C:
        raise ConfigurationError("T must exceed 2C")
    e0_T = residual_norms(f, T).l2
    if delta1 > 0 and e0_T > cfg.residual_fraction * delta1:
        raise ConfigurationError(f"residual L2 {e0_T:.3e} at T dominates delta1 = {delta1:.3e}")
    eps, eps_t = bump_perturbation(grid, T, C, delta1)
    rep = PersistenceReport(T, delta1, t_end, config={"cfl": cfg.cfl, "gamma_max": cfg.gamma_max,
                                                      "bound_K": cfg.bound_K, "C": C, "n": grid.n,
                                                      "r_max": grid.r_max, "residual_L2_at_T": e0_T})
    span = t_end - T
    nsteps = max(1, int(math.ceil(span / (cfg.cfl * grid.h) - 1e-9)))
    dt = span / nsteps
    every = max(1, nsteps // cfg.samples)

    def active_at(t):
        return min(grid.n, int((t + 2 * C) / grid.h) + 4)

    def record(t, forcing):
        nm = eps_norms(eps, eps_t, grid)
        st = WaveState(t, eps, eps_t)
        rep.times.append(float(t))
        rep.sup_eps.append(nm.sup)
        rep.energy_eps.append(nm.energy)
        rep.energy_total.append(energy(st, grid))
        rep.forcing_integral.append(float(forcing))

    forcing = 0.0
    e_prev = e0_T
    record(T, forcing)
    t = T
    acc = _forced_accel(eps, t, f, grid, active_at(t))
    for i in range(nsteps):
        eps_t += 0.5 * dt * acc
        eps += dt * eps_t
        t = T + (i + 1) * dt
        acc = _forced_accel(eps, t, f, grid, active_at(t))
        eps_t += 0.5 * dt * acc
        bad = not np.isfinite(eps).all() or np.abs(eps).max() > BLOWUP_THRESHOLD
        if (i + 1) % every == 0 or i + 1 == nsteps or bad:
            e_now = residual_norms(f, t).l2
            # trapezoid on the recorded samples for int ||e0(s)|| ds
            forcing += 0.5 * (e_prev + e_now) * (t - rep.times[-1])
            e_prev = e_now
            if bad:
                rep.blowup, rep.blowup_time = True, float(t)
                break
            record(t, forcing)
            if progress:
                progress(t)
    _finish_report(rep, cfg)
    return rep


def _finish_report(rep: PersistenceReport, cfg: PersistenceConfig):
    ts = np.asarray(rep.times)
    en = np.asarray(rep.energy_eps)
    if ts.size >= 4:
        half = ts >= ts[0] + 0.5 * (ts[-1] - ts[0])
        m = half & (en > 0)
        if np.count_nonzero(m) >= 4:
            x = np.log(ts[m] / rep.T)
            y = np.log(en[m])
            slope, icpt = np.polyfit(x, y, 1)
            ss_res = float(np.sum((y - slope * x - icpt) ** 2))
            ss_tot = float(np.sum((y - y.mean()) ** 2))
            rep.gamma_fit = float(slope)
            rep.gamma_r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
        elif np.all(en == 0):
            rep.gamma_fit, rep.gamma_r2 = 0.0, 1.0
    ref = rep.delta1 + np.asarray(rep.forcing_integral)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(ref > 0, en / ref, 0.0)
    rep.bound_constant = float(np.max(ratio)) if ratio.size else float("nan")
    g = rep.gamma_fit if math.isfinite(rep.gamma_fit) else math.inf
    bounded = rep.bound_constant <= cfg.bound_K * (ts[-1] / rep.T) ** max(g, 0.0)
    rep.persistent = bool(not rep.blowup and g <= cfg.gamma_max and bounded)


# ---------------------------------------------------------------------------
# closed-form fixtures
# ---------------------------------------------------------------------------

def free_wave(g, dg):
    """Exact regular free wave u = (g(r - t) - g(r + t))/r and its time derivative."""

    def sol(t, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = (g(r - t) - g(r + t)) / r
            ut = (-dg(r - t) - dg(r + t)) / r
        # r -> 0 limit: -2 g'(t) for u, -2 g''(t) approximated by the centered quotient
        u0 = -2.0 * dg(np.asarray(t))
        ut0 = -(dg(np.asarray(t) + 1e-5) - dg(np.asarray(t) - 1e-5)) / 1e-5
        return np.where(r > 0, u, u0), np.where(r > 0, ut, ut0)

    return sol


def gaussian_pulse(center=10.0, width=1.0):
    """Even profile g(x) = G(x - c) + G(x + c); evenness keeps (g(r-t) - g(r+t))/r regular at r = 0."""
    def G(x):
        return np.exp(-((x / width) ** 2))

    def g(x):
        return G(x - center) + G(x + center)

    def dg(x):
        return -2.0 * ((x - center) * G(x - center) + (x + center) * G(x + center)) / width**2

    return g, dg


def arctan_field(t, r):
    """u = 2 arctan(r/t) and u_t."""
    a = np.asarray(r, dtype=float) / t
    return 2.0 * np.arctan(a), -2.0 * a / (t * (1.0 + a * a))


def track_arctan(T: float, n: int, r_max: float, t_end=None):
    """Evolve 2 arctan(r/t) from T to t_end (default 2T); return max error at t_end."""
    t_end = 2 * T if t_end is None else t_end
    grid = RadialGrid(r_max, n, Origin.ODD)
    u, ut = arctan_field(T, grid.r)
    st = evolve(WaveState(T, u, ut), t_end, grid, outer=lambda t: arctan_field(t, r_max)[0])
    exact, _ = arctan_field(t_end, grid.r)
    return float(np.max(np.abs(st.u - exact)))
