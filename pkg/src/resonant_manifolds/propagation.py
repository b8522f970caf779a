"""Adaptive 8th-order Runge-Kutta flows for states, variational systems and jets.

The stepper is the Dormand-Prince 8(5,3) embedded pair (the DOP853 tableau),
compiled with numba and parameterised by the right-hand side, so the same
loop integrates a bare PCRTBP state, the state plus its 4x4 transition
matrix, and a jet whose ``4 (d + 1)`` coefficients ride along as one flat
vector (jet transport).

Section events are found by watching ``y`` change sign between accepted
steps and then solving ``y(tau) = 0`` by Newton's method on a single Runge-
Kutta step of length ``tau`` from the start of the bracketing step, using
``vy`` as the derivative.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dop

from .dynamics import COLLISION_FLOOR, CollisionError, check_mu, jacobi_constant, pcrtbp_rhs, variational_rhs
from .jets import Jet4, jet_mul, jet_pow_from

log = logging.getLogger(__name__)

_NS = _dop.N_STAGES
_A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
_B = np.ascontiguousarray(_dop.B)
_C = np.ascontiguousarray(_dop.C[:_NS])
_E3 = np.ascontiguousarray(_dop.E3)
_E5 = np.ascontiguousarray(_dop.E5)

OK, MAX_STEPS, STEP_UNDERFLOW, NO_CROSSING = 0, 1, 2, 3

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
SECTION_MIN_TIME = 1e-8


class IntegrationError(RuntimeError):
    """Step budget exhausted or step size underflow away from a primary."""


class NoCrossingError(RuntimeError):
    """No admissible section crossing within the allowed time."""


@dataclass(frozen=True)
class IntegratorConfig:
    abs_tol: float = 1e-13
    rel_tol: float = 1e-13
    initial_step: float = 0.0  # 0 selects the first step automatically
    max_steps: int = 2_000_000
    collision_floor: float = COLLISION_FLOOR

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")


DEFAULT_CONFIG = IntegratorConfig()


@dataclass(frozen=True)
class SectionEvent:
    state: np.ndarray
    time: float
    direction: int  # sign of vy at the crossing


# -- numba kernels ---------------------------------------------------------


@njit(nogil=True)  # not cached: function-typed args corrupt the cache index
def _stages(rhs, t, y, f0, h, p, K, A, B, C):
    n = y.size
    ytmp = np.empty(n)
    for i in range(n):
        K[0, i] = f0[i]
    for s in range(1, _NS):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += A[s, j] * K[j, i]
            ytmp[i] = y[i] + h * acc
        rhs(t + C[s] * h, ytmp, p, K[s])
    y_new = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(_NS):
            acc += B[j] * K[j, i]
        y_new[i] = y[i] + h * acc
    rhs(t + h, y_new, p, K[_NS])
    return y_new


@njit(cache=True, nogil=True)
def _error_norm(K, h, y, y_new, atol, rtol, E3, E5):
    n = y.size
    e5 = 0.0
    e3 = 0.0
    for i in range(n):
        sc = atol + rtol * max(abs(y[i]), abs(y_new[i]))
        a = 0.0
        b = 0.0
        for j in range(_NS + 1):
            a += E5[j] * K[j, i]
            b += E3[j] * K[j, i]
        a /= sc
        b /= sc
        e5 += a * a
        e3 += b * b
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    return abs(h) * e5 / math.sqrt((e5 + 0.01 * e3) * n)


@njit(cache=True, nogil=True)
def _all_finite(a):
    for v in a.ravel():
        if not math.isfinite(v):
            return False
    return True


@njit(nogil=True)  # not cached: function-typed args corrupt the cache index
def _initial_step(rhs, t0, y0, f0, direction, span, p, atol, rtol):
    n = y0.size
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + abs(y0[i]) * rtol
        d0 += (y0[i] / sc) ** 2
        d1 += (f0[i] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + h0 * direction * f0
    f1 = np.empty(n)
    rhs(t0 + h0 * direction, y1, p, f1)
    d2 = 0.0
    for i in range(n):
        sc = atol + abs(y0[i]) * rtol
        d2 += ((f1[i] - f0[i]) / sc) ** 2
    d2 = math.sqrt(d2 / n) / h0
    if not math.isfinite(d2):
        return 1e-6
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100.0 * h0, h1, span)


@njit(nogil=True)  # not cached: function-typed args corrupt the cache index
def _advance(rhs, t, y, f, h_abs, direction, t_bound, p, atol, rtol, K, A, B, C, E3, E5):
    """One accepted step (or failure). Returns (t_new, y_new, f_new, h_next, status)."""
    while True:
        min_step = 10.0 * max(abs(t) * 2.220446049250313e-16, 5e-324)
        if h_abs < min_step:
            return t, y, f, h_abs, STEP_UNDERFLOW
        h = h_abs * direction
        t_new = t + h
        if direction * (t_new - t_bound) > 0:
            t_new = t_bound
        h = t_new - t
        h_abs = abs(h)
        y_new = _stages(rhs, t, y, f, h, p, K, A, B, C)
        if not _all_finite(K):
            h_abs *= MIN_FACTOR
            continue
        err = _error_norm(K, h, y, y_new, atol, rtol, E3, E5)
        if not math.isfinite(err):
            h_abs *= MIN_FACTOR
            continue
        if err < 1.0:
            if err == 0.0:
                factor = MAX_FACTOR
            else:
                factor = min(MAX_FACTOR, SAFETY * err ** (-1.0 / 8.0))
            f_new = K[_NS].copy()
            return t_new, y_new, f_new, h_abs * factor, OK
        h_abs *= max(MIN_FACTOR, SAFETY * err ** (-1.0 / 8.0))


@njit(nogil=True)  # not cached: function-typed args corrupt the cache index
def dop853_flow(rhs, y0, t0, t1, p, atol, rtol, h0, max_steps, A, B, C, E3, E5):
    n = y0.size
    y = y0.copy()
    if t1 == t0:
        return y, t0, OK, 0
    direction = 1.0 if t1 > t0 else -1.0
    f = np.empty(n)
    rhs(t0, y, p, f)
    if not _all_finite(f):
        return y, t0, STEP_UNDERFLOW, 0
    K = np.empty((_NS + 1, n))
    h_abs = h0 if h0 > 0 else _initial_step(rhs, t0, y, f, direction, abs(t1 - t0), p, atol, rtol)
    t = t0
    steps = 0
    while direction * (t1 - t) > 0:
        if steps >= max_steps:
            return y, t, MAX_STEPS, steps
        t, y, f, h_abs, status = _advance(rhs, t, y, f, h_abs, direction, t1, p, atol, rtol, K, A, B, C, E3, E5)
        if status != OK:
            return y, t, status, steps
        steps += 1
    return y, t, OK, steps


@njit(nogil=True)  # not cached: function-typed args corrupt the cache index
def dop853_record(rhs, y0, t0, t1, p, atol, rtol, h0, max_steps, A, B, C, E3, E5):
    n = y0.size
    ts = np.empty(max_steps + 1)
    ys = np.empty((max_steps + 1, n))
    ts[0] = t0
    ys[0] = y0
    y = y0.copy()
    if t1 == t0:
        return ts[:1], ys[:1], OK
    direction = 1.0 if t1 > t0 else -1.0
    f = np.empty(n)
    rhs(t0, y, p, f)
    K = np.empty((_NS + 1, n))
    h_abs = h0 if h0 > 0 else _initial_step(rhs, t0, y, f, direction, abs(t1 - t0), p, atol, rtol)
    t = t0
    steps = 0
    while direction * (t1 - t) > 0:
        if steps >= max_steps:
            return ts[: steps + 1], ys[: steps + 1], MAX_STEPS
        t, y, f, h_abs, status = _advance(rhs, t, y, f, h_abs, direction, t1, p, atol, rtol, K, A, B, C, E3, E5)
        if status != OK:
            return ts[: steps + 1], ys[: steps + 1], status
        steps += 1
        ts[steps] = t
        ys[steps] = y
    return ts[: steps + 1], ys[: steps + 1], OK


@njit(nogil=True)  # not cached: function-typed args corrupt the cache index
def dop853_section(rhs, y0, direction, tmax, tmin, vy_sign, x_max, p, atol, rtol, h0, max_steps,
                   A, B, C, E3, E5):
    """Integrate until y = 0 with x < x_max and sign(vy) == vy_sign, |t| >= tmin."""
    n = y0.size
    y = y0.copy()
    f = np.empty(n)
    rhs(0.0, y, p, f)
    if not _all_finite(f):
        return y, 0.0, STEP_UNDERFLOW, 0
    K = np.empty((_NS + 1, n))
    t_bound = direction * tmax
    h_abs = h0 if h0 > 0 else _initial_step(rhs, 0.0, y, f, direction, tmax, p, atol, rtol)
    t = 0.0
    steps = 0
    while direction * (t_bound - t) > 0:
        if steps >= max_steps:
            return y, t, MAX_STEPS, steps
        t_new, y_new, f_new, h_next, status = _advance(rhs, t, y, f, h_abs, direction, t_bound, p, atol, rtol,
                                                       K, A, B, C, E3, E5)
        if status != OK:
            return y_new, t_new, status, steps
        steps += 1
        if y[1] != 0.0 and y[1] * y_new[1] <= 0.0:
            h = t_new - t
            tau = h * y[1] / (y[1] - y_new[1])
            ys = y_new
            for _ in range(40):
                ys = _stages(rhs, t, y, f, tau, p, K, A, B, C)
                z = ys[1]
                dz = ys[3]
                if abs(z) < 1e-15 or dz == 0.0:
                    break
                dtau = -z / dz
                tau += dtau
                if abs(dtau) <= 4e-16 * abs(tau):
                    ys = _stages(rhs, t, y, f, tau, p, K, A, B, C)
                    break
            tc = t + tau
            if ys[0] < x_max and ys[3] * vy_sign > 0.0 and abs(tc) >= tmin:
                return ys, tc, OK, steps
        t, y, f, h_abs = t_new, y_new, f_new, h_next
    return y, t, NO_CROSSING, steps


@njit(cache=True, nogil=True)
def jet_rhs(t, y, p, out):
    """Jet-transport field: y holds (4, d + 1) coefficients channel by channel."""
    mu = p[0]
    n = y.size // 4
    X = y[0:n]
    Y = y[n:2 * n]
    VX = y[2 * n:3 * n]
    VY = y[3 * n:4 * n]
    dx1 = X.copy()
    dx1[0] += mu
    dx2 = X.copy()
    dx2[0] = X[0] - 1.0 + mu
    ysq = np.empty(n)
    jet_mul(Y, Y, ysq)
    r1s = np.empty(n)
    jet_mul(dx1, dx1, r1s)
    r1s += ysq
    r2s = np.empty(n)
    jet_mul(dx2, dx2, r2s)
    r2s += ysq
    floor2 = p[1] * p[1]
    if not (r1s[0] > floor2 and (mu == 0.0 or r2s[0] > floor2)):
        for i in range(out.size):
            out[i] = np.nan
        return
    # constant terms computed as in pcrtbp_rhs so order 0 matches flow_state bit for bit
    r1 = math.sqrt(r1s[0])
    k1 = np.empty(n)
    jet_pow_from(r1s, -1.5, (1.0 - mu) / (r1 * r1 * r1), k1)
    k2 = np.zeros(n)
    if mu > 0.0:
        r2 = math.sqrt(r2s[0])
        jet_pow_from(r2s, -1.5, mu / (r2 * r2 * r2), k2)
    t1 = np.empty(n)
    t2 = np.empty(n)
    t3 = np.empty(n)
    t4 = np.empty(n)
    jet_mul(dx1, k1, t1)
    jet_mul(dx2, k2, t2)
    jet_mul(Y, k1, t3)
    jet_mul(Y, k2, t4)
    for i in range(n):
        out[i] = VX[i]
        out[n + i] = VY[i]
        out[2 * n + i] = 2.0 * VY[i] + X[i] - t1[i] - t2[i]
        out[3 * n + i] = -2.0 * VX[i] + Y[i] - t3[i] - t4[i]


# -- python surface ----------------------------------------------------------


def _params(mu, cfg):
    return np.array([check_mu(mu), cfg.collision_floor])


def _raise_for(status, pos, mu, cfg, what="flow"):
    if status == OK:
        return
    if status == MAX_STEPS:
        raise IntegrationError(f"{what}: step budget of {cfg.max_steps} exhausted")
    if status == STEP_UNDERFLOW:
        x, yy = pos
        r1 = math.hypot(x + mu, yy)
        r2 = math.hypot(x - 1 + mu, yy)
        if r1 < 1e-3 or (mu > 0.0 and r2 < 1e-3):
            raise CollisionError(f"{what}: step underflow near a primary (r1={r1:.2e}, r2={r2:.2e})")
        raise IntegrationError(f"{what}: step size underflow")
    if status == NO_CROSSING:
        raise NoCrossingError(f"{what}: no admissible section crossing")
    raise IntegrationError(f"{what}: integrator status {status}")


def _run(rhs, y0, t, mu, cfg, ystride=1):
    p = _params(mu, cfg)
    y, _, status, _ = dop853_flow(rhs, np.ascontiguousarray(y0, dtype=float), 0.0, float(t), p,
                                  cfg.abs_tol, cfg.rel_tol, cfg.initial_step, cfg.max_steps,
                                  _A, _B, _C, _E3, _E5)
    _raise_for(status, (y[0], y[ystride]), p[0], cfg)
    return y


def flow_state(s0, t: float, mu: float, cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Flow a synodic state by time ``t`` (either sign)."""
    return _run(pcrtbp_rhs, s0, t, mu, cfg)


def flow_variational(s0, t: float, mu: float, cfg: IntegratorConfig = DEFAULT_CONFIG):
    """Return ``(state, stm)`` after time ``t``."""
    y0 = np.concatenate([np.asarray(s0, dtype=float), np.eye(4).ravel()])
    y = _run(variational_rhs, y0, t, mu, cfg)
    return y[:4].copy(), y[4:].reshape(4, 4).copy()


def flow_jet(j0: Jet4, t: float, mu: float, cfg: IntegratorConfig = DEFAULT_CONFIG) -> Jet4:
    """Jet transport: integrate all polynomial coefficients of ``j0`` by time ``t``."""
    y = _run(jet_rhs, j0.coeffs.ravel(), t, mu, cfg, ystride=j0.degree + 1)
    return Jet4(y.reshape(4, -1))


def trajectory(s0, t: float, mu: float, cfg: IntegratorConfig = DEFAULT_CONFIG, max_points: int = 200_000):
    """Accepted-step samples ``(times, states)`` of a flow; warns on Jacobi drift."""
    p = _params(mu, cfg)
    ts, ys, status = dop853_record(pcrtbp_rhs, np.asarray(s0, dtype=float), 0.0, float(t), p,
                                   cfg.abs_tol, cfg.rel_tol, cfg.initial_step, max_points,
                                   _A, _B, _C, _E3, _E5)
    _raise_for(status, ys[-1, :2], p[0], cfg, "trajectory")
    c0 = jacobi_constant(ys[0], mu)
    drift = abs(jacobi_constant(ys[-1], mu) - c0)
    if drift > 1e-10 * max(1.0, abs(t) / (2 * math.pi)):
        log.warning("Jacobi drift %.2e over t=%.3f exceeds 1e-10 per period", drift, t)
    return ts.copy(), ys.copy()


def monodromy(orbit_point, period: float, mu: float, cfg: IntegratorConfig = DEFAULT_CONFIG,
              method: str = "variational", fd_step: float = 1e-7) -> np.ndarray:
    """Linearisation of the time-``period`` map at ``orbit_point``.

    ``method="finite-difference"`` builds columns from central differences of
    :func:`flow_state` instead of the variational equations (a cross-check).
    """
    x0 = np.asarray(orbit_point, dtype=float)
    if method == "variational":
        return flow_variational(x0, period, mu, cfg)[1]
    if method == "finite-difference":
        M = np.empty((4, 4))
        for j in range(4):
            dx = np.zeros(4)
            dx[j] = fd_step
            M[:, j] = (flow_state(x0 + dx, period, mu, cfg) - flow_state(x0 - dx, period, mu, cfg)) / (2 * fd_step)
        return M
    raise ValueError(f"unknown monodromy method {method!r}")


def next_section_crossing(s0, dir_time: int, vy_sign: int, mu: float, cfg: IntegratorConfig = DEFAULT_CONFIG,
                          tmax: float = 200.0, tmin: float = SECTION_MIN_TIME, x_max: float = 0.0) -> SectionEvent:
    """First crossing of ``y = 0, x < x_max`` with ``sign(vy) == vy_sign``.

    ``dir_time`` selects forward (+1) or backward (-1) integration; crossings
    closer than ``tmin`` to the start are ignored.
    """
    if dir_time not in (1, -1) or vy_sign not in (1, -1):
        raise ValueError("dir_time and vy_sign must be +1 or -1")
    p = _params(mu, cfg)
    y, t, status, _ = dop853_section(pcrtbp_rhs, np.asarray(s0, dtype=float), float(dir_time), float(tmax),
                                     float(tmin), float(vy_sign), float(x_max), p, cfg.abs_tol, cfg.rel_tol,
                                     cfg.initial_step, cfg.max_steps, _A, _B, _C, _E3, _E5)
    _raise_for(status, y[:2], p[0], cfg, "section crossing")
    return SectionEvent(state=y, time=float(t), direction=int(np.sign(y[3])))
