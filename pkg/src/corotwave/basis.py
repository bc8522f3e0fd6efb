"""Fundamental solutions, Green kernels and nonlinearities for the self-similar ODE.

The self-similar reduction of the corotational wave map equation is

    (1 - a^2) Q'' + (2/a - 2a) Q' - sin(2Q) / a^2 = 0,      a = r / t,

and its linearisation about Q = 0 is

    Q'' + (2/a) Q' - 2 Q / (a^2 (1 - a^2)) = 0.

Everything here is a pure function of its arguments. Functions accept floats or
numpy arrays. Where cancellation is a problem the private ``_interior`` and
``_exterior`` helpers take the distance to the light cone as a separate,
accurately known argument; the public functions derive it from ``a``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

EPS = np.finfo(float).eps

# Below this, phi2 and phi2' come from their Taylor series (direct form cancels).
PHI2_SERIES_MAX = 0.1
# Above this, phi2~ comes from its expansion in 1/a.
PHI2T_SERIES_MIN = 1.0e3
# Below this |q|, sin(2q) - 2q comes from its Taylor series.
FORCING_SERIES_MAX = 1.0e-2

_N_SERIES = 14


class DomainError(ValueError):
    """Argument outside the domain of a closed-form expression."""


class Region(enum.Enum):
    INTERIOR = "interior"
    CONE = "cone"
    EXTERIOR = "exterior"


@dataclass(frozen=True)
class SelfSimCoordinate:
    """Similarity variable a = r/t together with its region tag."""

    a: float

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError(f"similarity variable must be positive, got {self.a}")

    @property
    def region(self) -> Region:
        if self.a < 1.0:
            return Region.INTERIOR
        if self.a > 1.0:
            return Region.EXTERIOR
        return Region.CONE


@dataclass(frozen=True)
class KernelEval:
    value: float
    abs_error_estimate: float

    def __post_init__(self):
        if not self.abs_error_estimate >= 0:
            raise ValueError("abs_error_estimate must be nonnegative")

    def __float__(self):
        return float(self.value)


def _out(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


# ---------------------------------------------------------------------------
# series
# ---------------------------------------------------------------------------

def _phi2_series(a):
    # phi2(a) = sum_{k>=1} 4 a^(2k-1) / (4k^2 - 1)
    a = np.asarray(a, dtype=float)
    a2 = a * a
    acc = np.zeros_like(a)
    for k in range(_N_SERIES, 0, -1):
        acc = acc * a2 + 4.0 / (4.0 * k * k - 1.0)
    return acc * a


def _phi2_prime_series(a):
    # phi2'(a) = sum_{k>=1} 4 a^(2k-2) / (2k + 1)
    a = np.asarray(a, dtype=float)
    a2 = a * a
    acc = np.zeros_like(a)
    for k in range(_N_SERIES, 0, -1):
        acc = acc * a2 + 4.0 / (2.0 * k + 1.0)
    return acc


def forcing_numerator(q):
    """sin(2q) - 2q, by Taylor series for small |q|."""
    q = np.asarray(q, dtype=float)
    small = np.abs(q) < FORCING_SERIES_MAX
    out = np.sin(2.0 * q) - 2.0 * q
    if np.any(small):
        qs = q[small] if q.ndim else q
        q2 = qs * qs
        # -(4/3) q^3 + (4/15) q^5 - (8/315) q^7 + (4/2835) q^9 - (8/155925) q^11
        poly = -4.0 / 3.0 + q2 * (4.0 / 15.0 + q2 * (-8.0 / 315.0 + q2 * (4.0 / 2835.0 - q2 * 8.0 / 155925.0)))
        ser = poly * q2 * qs
        if q.ndim:
            out[small] = ser
        else:
            out = ser
    return _out(out)


def forcing_numerator_direct(q):
    q = np.asarray(q, dtype=float)
    return _out(np.sin(2.0 * q) - 2.0 * q)


# ---------------------------------------------------------------------------
# interior fundamental system, 0 < a < 1
# ---------------------------------------------------------------------------

def _log_ratio_interior(a, x):
    # log((1 - a)/(1 + a)) with x = 1 - a known accurately
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(a < 0.5, np.log1p(-a) - np.log1p(a), np.log(x) - np.log(2.0 - x))


def _interior(a, x, derivatives=False):
    """(phi1, phi2[, phi1', phi2']) for 0 < a < 1, x = 1 - a."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    p = x * (2.0 - x)                      # 1 - a^2
    inv_a2 = 1.0 / (a * a)
    phi1 = p * inv_a2
    small = a < PHI2_SERIES_MAX
    with np.errstate(divide="ignore", invalid="ignore"):
        L = _log_ratio_interior(np.where(small, 0.5, a), np.where(small, 0.5, x))
        phi2 = np.where(small, _phi2_series(a), 2.0 / a + phi1 * L)
    if not derivatives:
        return phi1, phi2
    dphi1 = -2.0 * inv_a2 / a
    with np.errstate(divide="ignore", invalid="ignore"):
        dphi2 = np.where(small, _phi2_prime_series(a), -4.0 * inv_a2 - 2.0 * L * inv_a2 / a)
    return phi1, phi2, dphi1, dphi2


def _check_interior(a):
    a = np.asarray(a, dtype=float)
    if np.any(~((a > 0) & (a < 1))):
        raise DomainError("interior basis requires 0 < a < 1")
    return a


def phi_interior(a):
    """Interior fundamental system (phi1, phi2) of the linearised equation."""
    a = _check_interior(a)
    phi1, phi2 = _interior(a, 1.0 - a)
    return _out(phi1), _out(phi2)


def phi_interior_prime(a):
    a = _check_interior(a)
    _, _, d1, d2 = _interior(a, 1.0 - a, derivatives=True)
    return _out(d1), _out(d2)


def phi0(a):
    """Regular solution normalised so that phi0(0) = 0, phi0'(0) = 1."""
    a = np.asarray(a, dtype=float)
    if np.any(~((a >= 0) & (a < 1))):
        raise DomainError("phi0 requires 0 <= a < 1")
    safe = np.where(a == 0, 0.5, a)
    _, phi2 = _interior(safe, 1.0 - safe)
    return _out(np.where(a == 0, 0.0, 0.75 * phi2))


def phi0_prime(a):
    a = np.asarray(a, dtype=float)
    if np.any(~((a >= 0) & (a < 1))):
        raise DomainError("phi0 requires 0 <= a < 1")
    safe = np.where(a == 0, 0.5, a)
    _, _, _, d2 = _interior(safe, 1.0 - safe, derivatives=True)
    return _out(np.where(a == 0, 1.0, 0.75 * d2))


# ---------------------------------------------------------------------------
# exterior fundamental system, a > 1
# ---------------------------------------------------------------------------

def _log_ratio_exterior(a, x):
    # log((a - 1)/(a + 1)) with x = a - 1 known accurately
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x < 1.0, np.log(x) - np.log1p(1.0 + x), np.log1p(-2.0 / (2.0 + x)))


def _exterior(a, x, derivatives=False):
    """(phi1~, phi2~[, phi1~', phi2~']) for a > 1, x = a - 1."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    p = x * (2.0 + x)                      # a^2 - 1
    inv_a2 = 1.0 / (a * a)
    phi1 = p * inv_a2
    far = a > PHI2T_SERIES_MIN
    L = _log_ratio_exterior(a, x)
    z = 1.0 / a
    # phi2~(a) = -4/a + phi2(1/a) / a^2
    phi2 = np.where(far, -4.0 * z + z * z * _phi2_series(np.where(far, z, 0.0)), -2.0 * z + phi1 * L)
    if not derivatives:
        return phi1, phi2
    dphi1 = 2.0 * inv_a2 * z
    dphi2 = 4.0 * inv_a2 + 2.0 * L * inv_a2 * z
    return phi1, phi2, dphi1, dphi2


def _check_exterior(a):
    a = np.asarray(a, dtype=float)
    if np.any(~(a > 1)):
        raise DomainError("exterior basis requires a > 1")
    return a


def phi_exterior(a):
    """Exterior fundamental system (phi1~, phi2~)."""
    a = _check_exterior(a)
    phi1, phi2 = _exterior(a, a - 1.0)
    return _out(phi1), _out(phi2)


def phi_exterior_prime(a):
    a = _check_exterior(a)
    _, _, d1, d2 = _exterior(a, a - 1.0, derivatives=True)
    return _out(d1), _out(d2)


def phi2t_direct(a):
    """Closed form of phi2~ without the far-field expansion (for overlap checks)."""
    a = _check_exterior(a)
    x = a - 1.0
    return _out(-2.0 / a + x * (2.0 + x) / (a * a) * _log_ratio_exterior(a, x))


def phi2_direct(a):
    """Closed form of phi2 without the small-a series (for overlap checks)."""
    a = _check_interior(a)
    x = 1.0 - a
    return _out(2.0 / a + x * (2.0 - x) / (a * a) * _log_ratio_interior(a, x))


# ---------------------------------------------------------------------------
# Wronskian and Green kernels
# ---------------------------------------------------------------------------

def wronskian(b):
    """phi1 phi2' - phi1' phi2 = 4 / b^2 (same for the exterior pair)."""
    b = np.asarray(b, dtype=float)
    if np.any(~(b > 0)):
        raise DomainError("wronskian requires b > 0")
    return _out(4.0 / (b * b))


_FD6 = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0


def fd_wronskian(pair, a, rel_step=1e-3):
    """Wronskian of ``pair(a) -> (phi1, phi2)`` from 6th-order centered differences.

    The step is rel_step times the distance to the nearest singular point
    (0 or the cone), so the stencil stays inside one region.
    """
    a = np.asarray(a, dtype=float)
    h = rel_step * np.minimum(a, np.abs(a - 1.0))
    f1, f2 = pair(a)
    d1 = np.zeros_like(f1)
    d2 = np.zeros_like(f2)
    for w, k in zip(_FD6, range(-3, 4)):
        if w:
            g1, g2 = pair(a + k * h)
            d1 = d1 + w * g1
            d2 = d2 + w * g2
    return (f1 * d2 - d1 * f2) / h


def _s_interior(a):
    # a^2 phi2(a) = 2a + (1 - a^2) log((1-a)/(1+a))
    _, phi2 = _interior(a, 1.0 - a)
    return a * a * phi2


def green_interior(a: float, b: float) -> KernelEval:
    """G(a,b) = [phi1(a) phi2(b) - phi1(b) phi2(a)] / W(b) on (0,1)^2.

    Written as [p(a) s(b) - p(b) s(a)] / (4 a^2) with p = 1 - a^2 and
    s = a^2 phi2, so the diagonal vanishes exactly and b -> 0 is harmless.
    """
    a = float(a)
    b = float(b)
    if not (0 < a < 1 and 0 < b < 1):
        raise DomainError("green_interior requires a, b in (0, 1)")
    pa = (1.0 - a) * (1.0 + a)
    pb = (1.0 - b) * (1.0 + b)
    t1 = pa * float(_s_interior(b))
    t2 = pb * float(_s_interior(a))
    val = (t1 - t2) / (4.0 * a * a)
    err = 16.0 * EPS * (abs(t1) + abs(t2)) / (4.0 * a * a)
    return KernelEval(val, err)


def green_interior_cone_limit(b: float) -> KernelEval:
    """lim_{a -> 1-} G(a, b) = -(1 - b^2) / 2."""
    b = float(b)
    if not 0 < b < 1:
        raise DomainError("b must lie in (0, 1)")
    val = -0.5 * (1.0 - b) * (1.0 + b)
    return KernelEval(val, 2.0 * EPS * abs(val))


def green_exterior(a: float, b: float) -> KernelEval:
    """G~(a,b) built from the exterior pair; same structure as green_interior."""
    a = float(a)
    b = float(b)
    if not (a > 1 and b > 1):
        raise DomainError("green_exterior requires a, b > 1")

    def s(v):
        _, phi2 = _exterior(v, v - 1.0)
        return v * v * float(phi2)

    pa = (a - 1.0) * (a + 1.0)
    pb = (b - 1.0) * (b + 1.0)
    t1 = pa * s(b)
    t2 = pb * s(a)
    val = (t1 - t2) / (4.0 * a * a)
    err = 16.0 * EPS * (abs(t1) + abs(t2)) / (4.0 * a * a)
    return KernelEval(val, err)


# ---------------------------------------------------------------------------
# nonlinearity
# ---------------------------------------------------------------------------

def nonlinearity_f(u):
    """f(u) = 2 sin u cos u."""
    return _out(np.sin(2.0 * np.asarray(u, dtype=float)))


def picard_forcing(q, a):
    """H = (sin 2q - 2q) / (a^2 (1 - a^2)), the nonlinear remainder."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0) or np.any(a == 1.0):
        raise DomainError("picard_forcing is singular at a = 0 and a = 1")
    return _out(np.asarray(forcing_numerator(q)) / (a * a * (1.0 - a) * (1.0 + a)))
