"""Planar circular restricted three-body problem in the synodic frame.

Units: primary separation 1, total mass 1, mean motion 1.  The primary sits
at ``x = -mu`` and the secondary at ``x = 1 - mu``.  States are 4-vectors
``(x, y, vx, vy)``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

COLLISION_FLOOR = 1e-12

MU_JUPITER_EUROPA = 2.5266448850435028e-5
MU_EARTH_MOON = 1.2150584270571545e-2


class CollisionError(RuntimeError):
    """A trajectory came within the collision floor of a primary."""


class DomainError(ValueError):
    """No real velocity reconstructs the requested state."""


def check_mu(mu: float) -> float:
    mu = float(mu)
    if not 0.0 <= mu < 0.5:
        raise ValueError(f"mass ratio must lie in [0, 0.5), got {mu}")
    return mu


def _distances(state, mu, floor):
    x, y = state[0], state[1]
    r1 = math.hypot(x + mu, y)
    r2 = math.hypot(x - 1.0 + mu, y)
    # a massless secondary (mu = 0) exerts no force and cannot collide
    if r1 < floor or (mu > 0.0 and r2 < floor):
        raise CollisionError(f"collision: r1={r1:.3e}, r2={r2:.3e}")
    return r1, r2


@njit(cache=True, nogil=True)
def pcrtbp_rhs(t, s, p, out):
    """numba right-hand side; ``p = [mu, collision_floor]``.

    Writes NaN on collision so the integrator can shrink or abort.
    """
    mu = p[0]
    x, y, vx, vy = s[0], s[1], s[2], s[3]
    dx1 = x + mu
    dx2 = x - 1.0 + mu
    r1 = math.sqrt(dx1 * dx1 + y * y)
    r2 = math.sqrt(dx2 * dx2 + y * y)
    if r1 < p[1] or (mu > 0.0 and r2 < p[1]):
        for i in range(4):
            out[i] = np.nan
        return
    k1 = (1.0 - mu) / (r1 * r1 * r1)
    k2 = mu / (r2 * r2 * r2) if mu > 0.0 else 0.0
    out[0] = vx
    out[1] = vy
    out[2] = 2.0 * vy + x - k1 * dx1 - k2 * dx2
    out[3] = -2.0 * vx + y - k1 * y - k2 * y


@njit(cache=True, nogil=True)
def potential_hessian(x, y, mu):
    dx1 = x + mu
    dx2 = x - 1.0 + mu
    r1s = dx1 * dx1 + y * y
    r2s = dx2 * dx2 + y * y
    r1 = math.sqrt(r1s)
    r2 = math.sqrt(r2s)
    a1 = (1.0 - mu) / (r1s * r1)
    a2 = mu / (r2s * r2) if mu > 0.0 else 0.0
    b1 = 3.0 * (1.0 - mu) / (r1s * r1s * r1)
    b2 = 3.0 * mu / (r2s * r2s * r2) if mu > 0.0 else 0.0
    uxx = 1.0 - a1 - a2 + b1 * dx1 * dx1 + b2 * dx2 * dx2
    uyy = 1.0 - a1 - a2 + (b1 + b2) * y * y
    uxy = (b1 * dx1 + b2 * dx2) * y
    return uxx, uxy, uyy


@njit(cache=True, nogil=True)
def variational_rhs(t, s, p, out):
    """State plus row-major 4x4 state transition matrix (20 components)."""
    pcrtbp_rhs(t, s, p, out)
    if out[0] != out[0]:
        for i in range(4, 20):
            out[i] = np.nan
        return
    uxx, uxy, uyy = potential_hessian(s[0], s[1], p[0])
    # d(Phi)/dt = J Phi with J = [[0,0,1,0],[0,0,0,1],[uxx,uxy,0,2],[uxy,uyy,-2,0]]
    for c in range(4):
        p0 = s[4 + c]
        p1 = s[8 + c]
        p2 = s[12 + c]
        p3 = s[16 + c]
        out[4 + c] = p2
        out[8 + c] = p3
        out[12 + c] = uxx * p0 + uxy * p1 + 2.0 * p3
        out[16 + c] = uxy * p0 + uyy * p1 - 2.0 * p2


def vector_field(state, mu: float, floor: float = COLLISION_FLOOR) -> np.ndarray:
    """Time derivative ``(vx, vy, ax, ay)`` of a synodic state."""
    mu = check_mu(mu)
    s = np.asarray(state, dtype=float)
    _distances(s, mu, floor)
    out = np.empty(4)
    pcrtbp_rhs(0.0, s, np.array([mu, floor]), out)
    return out


def jacobian(state, mu: float) -> np.ndarray:
    """Jacobian of :func:`vector_field` with respect to the state."""
    s = np.asarray(state, dtype=float)
    uxx, uxy, uyy = potential_hessian(s[0], s[1], float(mu))
    return np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [uxx, uxy, 0.0, 2.0],
            [uxy, uyy, -2.0, 0.0],
        ]
    )


def jacobi_constant(state, mu: float, floor: float = COLLISION_FLOOR) -> float:
    mu = check_mu(mu)
    s = np.asarray(state, dtype=float)
    r1, r2 = _distances(s, mu, floor)
    x, y, vx, vy = s
    return float(x * x + y * y + 2.0 * ((1.0 - mu) / r1 + (mu / r2 if mu > 0.0 else 0.0)) - (vx * vx + vy * vy))


def time_reversal(state) -> np.ndarray:
    """The reversing involution ``(x, y, vx, vy) -> (x, -y, -vx, vy)``."""
    s = np.asarray(state, dtype=float)
    return s * REVERSAL


REVERSAL = np.array([1.0, -1.0, -1.0, 1.0])


def velocity_from_section(x: float, vx: float, C: float, sign: int, mu: float,
                          floor: float = COLLISION_FLOOR) -> float:
    """Recover ``vy`` on ``y = 0`` from ``x``, ``vx`` and the Jacobi constant."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    mu = check_mu(mu)
    r1, r2 = _distances((x, 0.0), mu, floor)
    radicand = 2.0 * (1.0 - mu) / r1 + (2.0 * mu / r2 if mu > 0.0 else 0.0) + x * x - vx * vx - C
    if radicand < 0.0:
        raise DomainError(f"negative radicand {radicand:.3e}: state not reachable at C={C}")
    return sign * math.sqrt(radicand)
