"""Gaussian heat kernel and closed-form overlap integrals with a quadrature oracle.

The building block is the pinned profile

    pin(t, x; r, z) = rho(t - r, x - z) * rho(r, z) / rho(t, x),

the density of the position at time r of a path pinned at (0, 0) and (t, x),
normalized by the full kernel.  Squares, products and differences of such
profiles, integrated over (r, z), admit closed forms and explicit bounds;
they calibrate every regularity estimate used elsewhere in the package.
Each identity is implemented twice: a closed form and an independent
adaptive quadrature of the integrand as written, so either side can audit
the other.

Identifier -> integral:

    pin2_slice             int_R pin(t,x;r,z)^2 dz                  (fixed r)
    pin2_total             int_0^t int_R pin(t,x;r,z)^2 dz dr
    pin2_total_lagged      same with horizon t+h, r in (0,t)
    pin2_tail_lagged       same with horizon t+h, r in (t,t+h)
    cross_slice_lagged     int_R pin(t+h,x;r,z) pin(t,x;r,z) dz     (fixed r)
    cross_total_space      int_0^t int_R pin(t,y;r,z) pin(t,x;r,z) dz dr
    diff2_space            int_0^t int_R [pin(t,y) - pin(t,x)]^2 dz dr
    cross_total_lagged_gap int_0^t int_R pin(t+h,x) pin(t,x) dz dr  (t >= delta)
    diff2_time_short       int_0^t int_R [pin(t+h,x) - pin(t,x)]^2,  t <= h^alpha
    diff2_time_uniform     same, t in [0, T], x in [-K, K]

All quadratures substitute r = t sin^2(theta) in time, which removes the
integrable (r (t-r))^(-1/2) endpoint singularities, and truncate space at
|z| <= max|space args| + 12 sqrt(horizon).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import DomainError, QuadratureFailureError

_SQPI = math.sqrt(math.pi)


def rho(t, x):
    """Heat kernel with diffusivity 1/2: density of N(0, t), zero for t <= 0."""
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        val = np.where(t > 0.0,
                       np.exp(-np.square(x) / np.where(t > 0, 2.0 * t, 1.0))
                       / np.sqrt(2.0 * np.pi * np.where(t > 0, t, 1.0)),
                       0.0)
    if val.ndim == 0:
        return float(val)
    return val


def pin_profile(t, x, r, z):
    """rho(t-r, x-z) rho(r, z) / rho(t, x), the normalized pinned-path profile."""
    return rho(t - r, x - z) * rho(r, z) / rho(t, x)


def _require(cond, ident, hypothesis):
    if not cond:
        raise DomainError(f"{ident}: requires {hypothesis}")


# ---------------------------------------------------------------------------
# closed forms


def _cf_pin2_slice(t, r, x=0.0):
    _require(t > 0, "pin2_slice", "t > 0")
    _require(0 < r < t, "pin2_slice", "0 < r < t")
    return math.sqrt(t) / (2.0 * math.sqrt(math.pi * (t - r) * r))


def _cf_pin2_total(t, x=0.0):
    _require(t > 0, "pin2_total", "t > 0")
    return math.sqrt(t * math.pi) / 2.0


def _arcsin_term(t, h):
    return math.asin(1.0 - 2.0 * h / (t + h))


def _cf_pin2_total_lagged(t, h, x=0.0):
    _require(t > 0, "pin2_total_lagged", "t > 0")
    _require(h > 0, "pin2_total_lagged", "h > 0")
    return math.sqrt(t + h) / (2.0 * _SQPI) * (_arcsin_term(t, h) + math.pi / 2.0)


def _cf_pin2_tail_lagged(t, h, x=0.0):
    _require(t > 0, "pin2_tail_lagged", "t > 0")
    _require(h > 0, "pin2_tail_lagged", "h > 0")
    return math.sqrt(t + h) / (2.0 * _SQPI) * (math.pi / 2.0 - _arcsin_term(t, h))


def _cf_cross_slice_lagged(t, h, r, x=0.0):
    _require(t > 0, "cross_slice_lagged", "t > 0")
    _require(h >= 0, "cross_slice_lagged", "h >= 0")
    _require(0 < r < t, "cross_slice_lagged", "0 < r < t")
    denom = (t + h) * (t - r) + t * (t + h - r)
    pref = math.sqrt(t * (t + h)) / math.sqrt(2.0 * math.pi * r * denom)
    expo = -(x * x / (2.0 * t)) * (h * h * r) / ((t + h) * denom)
    return pref * math.exp(expo)


_CLOSED_FORMS = {
    "pin2_slice": _cf_pin2_slice,
    "pin2_total": _cf_pin2_total,
    "pin2_total_lagged": _cf_pin2_total_lagged,
    "pin2_tail_lagged": _cf_pin2_tail_lagged,
    "cross_slice_lagged": _cf_cross_slice_lagged,
}


def closed_form(ident, **params):
    """Exact value of the identity `ident` at the given parameters."""
    try:
        fn = _CLOSED_FORMS[ident]
    except KeyError:
        raise DomainError(f"no closed form registered for {ident!r}") from None
    return fn(**params)


# ---------------------------------------------------------------------------
# quadrature oracle

#: horizon used for the spatial truncation |z| <= span + 12 sqrt(horizon)
def _z_limits(span, horizon):
    half = abs(span) + 12.0 * math.sqrt(horizon)
    return -half, half


@dataclass
class _QuadState:
    worst: float = 0.0

    def track(self, err):
        self.worst = max(self.worst, err)


def _space_integral(fn, span, horizon, state):
    lo, hi = _z_limits(span, horizon)
    val, err = quad(fn, lo, hi, epsabs=1e-13, epsrel=1e-11, limit=200)
    state.track(err)
    return val


def _time_integral(fn, t, state):
    """Integrate fn over r in (0, t) via r = t sin^2(theta)."""

    def g(theta):
        s = math.sin(theta)
        c = math.cos(theta)
        r = t * s * s
        return fn(r) * 2.0 * t * s * c

    val, err = quad(g, 0.0, math.pi / 2.0, epsabs=1e-12, epsrel=1e-10, limit=200)
    state.track(err)
    return val


def _q_pin2_slice(state, t, r, x=0.0):
    _require(t > 0 and 0 < r < t, "pin2_slice", "t > 0 and 0 < r < t")
    return _space_integral(lambda z: pin_profile(t, x, r, z) ** 2, x, t, state)


def _q_pin2_total(state, t, x=0.0):
    _require(t > 0, "pin2_total", "t > 0")
    return _time_integral(
        lambda r: _space_integral(lambda z: pin_profile(t, x, r, z) ** 2, x, t, state),
        t, state)


def _q_pin2_total_lagged(state, t, h, x=0.0):
    _require(t > 0 and h > 0, "pin2_total_lagged", "t > 0 and h > 0")
    return _time_integral(
        lambda r: _space_integral(lambda z: pin_profile(t + h, x, r, z) ** 2, x, t + h, state),
        t, state)


def _q_pin2_tail_lagged(state, t, h, x=0.0):
    _require(t > 0 and h > 0, "pin2_tail_lagged", "t > 0 and h > 0")

    # substitute r = t + h sin^2(theta) over the tail window (t, t+h)
    def g(theta):
        s = math.sin(theta)
        c = math.cos(theta)
        r = t + h * s * s
        inner = _space_integral(lambda z: pin_profile(t + h, x, r, z) ** 2, x, t + h, state)
        return inner * 2.0 * h * s * c

    val, err = quad(g, 0.0, math.pi / 2.0, epsabs=1e-12, epsrel=1e-10, limit=200)
    state.track(err)
    return val


def _q_cross_slice_lagged(state, t, h, r, x=0.0):
    _require(t > 0 and h >= 0 and 0 < r < t, "cross_slice_lagged",
             "t > 0, h >= 0, 0 < r < t")
    return _space_integral(
        lambda z: pin_profile(t + h, x, r, z) * pin_profile(t, x, r, z), x, t + h, state)


def _q_cross_total_space(state, t, x, y):
    _require(t > 0, "cross_total_space", "t > 0")
    span = max(abs(x), abs(y))
    return _time_integral(
        lambda r: _space_integral(
            lambda z: pin_profile(t, y, r, z) * pin_profile(t, x, r, z), span, t, state),
        t, state)


def _q_diff2_space(state, t, x, y):
    _require(t > 0, "diff2_space", "t > 0")
    span = max(abs(x), abs(y))
    return _time_integral(
        lambda r: _space_integral(
            lambda z: (pin_profile(t, y, r, z) - pin_profile(t, x, r, z)) ** 2, span, t, state),
        t, state)


def _q_cross_total_lagged(state, t, h, x):
    _require(t > 0 and h >= 0, "cross_total_lagged", "t > 0 and h >= 0")
    return _time_integral(
        lambda r: _space_integral(
            lambda z: pin_profile(t + h, x, r, z) * pin_profile(t, x, r, z), x, t + h, state),
        t, state)


def _q_diff2_time(state, t, h, x):
    _require(t >= 0 and h >= 0, "diff2_time", "t >= 0 and h >= 0")
    if t == 0.0:
        return 0.0
    return _time_integral(
        lambda r: _space_integral(
            lambda z: (pin_profile(t + h, x, r, z) - pin_profile(t, x, r, z)) ** 2,
            x, t + h, state),
        t, state)


_QUADRATURES = {
    "pin2_slice": _q_pin2_slice,
    "pin2_total": _q_pin2_total,
    "pin2_total_lagged": _q_pin2_total_lagged,
    "pin2_tail_lagged": _q_pin2_tail_lagged,
    "cross_slice_lagged": _q_cross_slice_lagged,
}


def quadrature(ident, params, tol=1e-8):
    """Adaptive quadrature of the integral `ident`, absolute error <= tol."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    try:
        fn = _QUADRATURES[ident]
    except KeyError:
        raise DomainError(f"no quadrature registered for {ident!r}") from None
    state = _QuadState()
    val = fn(state, **params)
    if state.worst > tol:
        raise QuadratureFailureError(
            f"{ident}: quadrature error estimate {state.worst:.3e} exceeds tol {tol:.3e}",
            achieved_error=state.worst)
    return val


# ---------------------------------------------------------------------------
# inequality reports


@dataclass(frozen=True)
class BoundsReport:
    ident: str
    params: dict
    lhs: float
    lower: float
    upper: float
    satisfied: bool
    slack: float


def _report(ident, params, lhs, lower, upper):
    # slack: distance to the nearest violated edge; tiny fp latitude
    eps = 1e-9 * max(1.0, abs(upper), abs(lhs))
    ok = (lower - eps) <= lhs <= (upper + eps)
    slack = min(lhs - lower, upper - lhs)
    return BoundsReport(ident=ident, params=dict(params), lhs=lhs,
                        lower=lower, upper=upper, satisfied=bool(ok),
                        slack=float(slack))


def check_bounds(ident, **params):
    """Quadrature the left side of the bound `ident` and report slack.

    Reports carry the numeric slack rather than just a boolean so regression
    toward an edge stays visible.
    """
    state = _QuadState()
    if ident == "cross_total_space":
        t, x, y = params["t"], params["x"], params["y"]
        lhs = _q_cross_total_space(state, t, x, y)
        up = math.sqrt(math.pi * t) / 2.0
        return _report(ident, params, lhs, up - abs(x - y) / 2.0, up)
    if ident == "diff2_space":
        t, x, y = params["t"], params["x"], params["y"]
        lhs = _q_diff2_space(state, t, x, y)
        return _report(ident, params, lhs, 0.0, abs(x - y))
    if ident == "pin2_tail_lagged":
        t, h = params["t"], params["h"]
        lhs = _q_pin2_tail_lagged(state, t, h, params.get("x", 0.0))
        return _report(ident, params, lhs, 0.0, 4.0 * math.sqrt(h))
    if ident == "cross_total_lagged_gap":
        t, h, x = params["t"], params["h"], params["x"]
        delta, T = params["delta"], params["T"]
        _require(0 < delta < 1, ident, "0 < delta < 1")
        _require(delta <= t <= t + h <= T, ident, "delta <= t <= t+h <= T")
        _require(T > 1, ident, "T > 1")
        lhs = _q_cross_total_lagged(state, t, h, x)
        up = math.sqrt(math.pi * t) / 2.0
        low = (up - (T / (delta * _SQPI)) * math.sqrt(h)
               - h * (_SQPI * T**1.5 / (8.0 * delta**3)) * x * x)
        return _report(ident, params, lhs, low, up)
    if ident == "diff2_time_short":
        h, alpha, t, x = params["h"], params["alpha"], params["t"], params["x"]
        _require(0 <= h <= 1, ident, "h in [0, 1]")
        _require(0 < alpha <= 1, ident, "alpha in (0, 1]")
        _require(0 <= t <= h**alpha, ident, "t in [0, h^alpha]")
        lhs = _q_diff2_time(state, t, h, x)
        return _report(ident, params, lhs, 0.0, 10.0 * h ** (alpha / 2.0))
    if ident == "diff2_time_uniform":
        T, K, t, x, h = params["T"], params["K"], params["t"], params["x"], params["h"]
        _require(T > 1 and K > 1, ident, "T > 1 and K > 1")
        _require(0 <= t <= T, ident, "t in [0, T]")
        _require(abs(x) <= K, ident, "x in [-K, K]")
        _require(0 <= h <= 1, ident, "h in [0, 1]")
        lhs = _q_diff2_time(state, t, h, x)
        up = 10.0 * T**1.5 * K * K * h ** (1.0 / 7.0)
        delta = params.get("delta")
        if delta is not None:
            _require(delta <= t <= t + h <= T, ident, "t, t+h in [delta, T]")
            up = min(up, 10.0 / delta**3 * T**1.5 * K * K * math.sqrt(h))
        return _report(ident, params, lhs, 0.0, up)
    raise DomainError(f"no bound registered for {ident!r}")


EQUALITY_IDS = tuple(_CLOSED_FORMS)
BOUND_IDS = ("cross_total_space", "diff2_space", "pin2_tail_lagged",
             "cross_total_lagged_gap", "diff2_time_short", "diff2_time_uniform")
