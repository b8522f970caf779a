"""Keplerian resonances, synodic Delaunay coordinates and the Melnikov function.

At ``mu = 0`` an ``n:m`` resonant ellipse (``a = (m/n)**(2/3)``) is periodic in
the rotating frame with period ``2 pi m``.  The Melnikov function ``M(g)``
integrates ``-(1/L**3) dH1/dl`` along that unperturbed orbit started at
``(L, G, l=0, g)``; its simple zeros mark orbits that survive for small
``mu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi
E_MIN, E_MAX = 0.05, 0.95
FD_STEP = 1e-6
COLLISION_DISTANCE = 1e-3


class KeplerError(RuntimeError):
    pass


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class ResonanceSpec:
    n: int
    m: int
    e: float

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or math.gcd(self.n, self.m) != 1:
            raise ValueError(f"n:m = {self.n}:{self.m} must be coprime positive integers")
        if not E_MIN <= self.e <= E_MAX:
            raise ValueError(f"eccentricity {self.e} outside [{E_MIN}, {E_MAX}]")

    @property
    def a(self) -> float:
        return (self.m / self.n) ** (2.0 / 3.0)

    @property
    def L(self) -> float:
        return math.sqrt(self.a)

    @property
    def G(self) -> float:
        return self.L * math.sqrt(1.0 - self.e * self.e)

    @property
    def period(self) -> float:
        return TWO_PI * self.m

    @property
    def label(self) -> str:
        return f"{self.n}:{self.m}"


@dataclass(frozen=True)
class SynodicDelaunay:
    L: float
    G: float
    ell: float
    g: float


def solve_kepler(ell, e, tol: float = 1e-14, max_iter: int = 50):
    """Eccentric anomaly ``E`` with ``E - e sin E = ell``; vectorised over ``ell``."""
    if not 0.0 < e < 1.0:
        raise ValueError("Kepler's equation needs 0 < e < 1")
    ell = np.asarray(ell, dtype=float)
    M = np.mod(ell + math.pi, TWO_PI) - math.pi
    E = M + e * np.sin(M) if e < 0.8 else math.pi * np.sign(M)
    for _ in range(max_iter):
        f = E - e * np.sin(E) - M
        dE = f / (1.0 - e * np.cos(E))
        E = E - dE
        if np.all(np.abs(dE) <= tol * np.maximum(1.0, np.abs(E))):
            break
    else:
        raise KeplerError(f"Kepler solve did not converge (e={e})")
    E = E + (ell - M)
    return float(E) if E.ndim == 0 else E


def _elements(L, G):
    if not (L > 0 and 0 < G <= L):
        raise ValueError(f"need L > 0 and 0 < G <= L, got L={L}, G={G}")
    a = L * L
    e = math.sqrt(max(0.0, 1.0 - (G / L) ** 2))
    return a, e


def _anomalies(ell, a, e):
    """Radius and true anomaly along a Kepler ellipse (vectorised)."""
    if e == 0.0:
        ell = np.asarray(ell, dtype=float)
        return a + 0.0 * ell, ell * 1.0
    E = solve_kepler(ell, e)
    r = a * (1.0 - e * np.cos(E))
    f = 2.0 * np.arctan2(math.sqrt(1.0 + e) * np.sin(E / 2.0), math.sqrt(1.0 - e) * np.cos(E / 2.0))
    return r, f


def delaunay_to_cartesian(sd: SynodicDelaunay, mu: float = 0.0) -> np.ndarray:
    """Synodic Delaunay elements to a rotating-frame state.

    The elements describe the Kepler orbit about the primary; the velocity
    is corrected by ``-omega x r`` for the frame rotation.
    """
    a, e = _elements(sd.L, sd.G)
    r, f = _anomalies(sd.ell, a, e)
    r = float(r)
    f = float(f)
    theta = sd.g + f
    p = sd.G * sd.G
    vr = e * math.sin(f) / sd.G
    vt = math.sqrt(p) / r if p > 0 else 0.0  # h / r with h = G
    c, s = math.cos(theta), math.sin(theta)
    X, Y = r * c, r * s
    vX = vr * c - vt * s
    vY = vr * s + vt * c
    return np.array([X - mu, Y, vX + Y, vY - X])


def cartesian_to_delaunay(state, mu: float = 0.0) -> SynodicDelaunay:
    x, y, vx, vy = np.asarray(state, dtype=float)
    X, Y = x + mu, y
    vX, vY = vx - Y, vy + X
    r = math.hypot(X, Y)
    v2 = vX * vX + vY * vY
    energy = 0.5 * v2 - 1.0 / r
    if energy >= 0.0:
        raise ValueError("orbit is not bound")
    h = X * vY - Y * vX
    if h <= 0.0:
        raise ValueError("orbit is rectilinear or retrograde")
    a = -0.5 / energy
    rv = X * vX + Y * vY
    ex = (v2 - 1.0 / r) * X - rv * vX
    ey = (v2 - 1.0 / r) * Y - rv * vY
    e = math.hypot(ex, ey)
    if e < 1e-10:
        raise ValueError("circular orbit: periapsis longitude undefined")
    g = math.atan2(ey, ex)
    E = math.atan2(rv / math.sqrt(a), 1.0 - r / a)
    ell = E - e * math.sin(E)
    L = math.sqrt(a)
    return SynodicDelaunay(L=L, G=h, ell=math.remainder(ell, TWO_PI) % TWO_PI, g=g % TWO_PI)


def perturbation_H1(L, G, ell, g):
    """The ``mu``-order part of the synodic Delaunay Hamiltonian (vectorised)."""
    a, e = _elements(L, G)
    r, f = _anomalies(ell, a, e)
    c = np.cos(np.asarray(g) + f)
    d2 = 1.0 + r * r - 2.0 * r * c
    if np.any(d2 <= 0.0):
        raise ValueError("collision with the secondary")
    out = r * c - 1.0 / np.sqrt(d2)
    return float(out) if np.ndim(out) == 0 else out


def dH1_dell(L, G, ell, g, method: str = "fd", step: float = FD_STEP):
    """``dH1/dl`` at fixed ``(L, G, g)`` by central differences or the chain rule."""
    if method == "fd":
        # reduce first and use the representable step so ell +- h carries no rounding bias
        ell = np.remainder(np.asarray(ell, dtype=float) + math.pi, TWO_PI) - math.pi
        hp = (ell + step) - ell
        hm = ell - (ell - step)
        return (perturbation_H1(L, G, ell + hp, g) - perturbation_H1(L, G, ell - hm, g)) / (hp + hm)
    if method != "analytic":
        raise ValueError(f"unknown method {method!r}")
    a, e = _elements(L, G)
    E = solve_kepler(ell, e)
    cosE = np.cos(E)
    r = a * (1.0 - e * cosE)
    f = 2.0 * np.arctan2(math.sqrt(1.0 + e) * np.sin(E / 2.0), math.sqrt(1.0 - e) * np.cos(E / 2.0))
    dE = 1.0 / (1.0 - e * cosE)
    dr = a * e * np.sin(E) * dE
    df = math.sqrt(1.0 - e * e) * dE * dE
    u = np.asarray(g) + f
    c, s = np.cos(u), np.sin(u)
    d = 1.0 + r * r - 2.0 * r * c
    k = d ** -1.5
    dH_dr = c + (r - c) * k
    dH_df = -r * s + r * s * k
    return dH_dr * dr + dH_df * df


def melnikov_integrand(spec: ResonanceSpec, g_i, t, method: str = "fd"):
    L, G = spec.L, spec.G
    return -dH1_dell(L, G, t / L ** 3, g_i - t, method=method) / L ** 3


def _melnikov_many(spec: ResonanceSpec, g_values, quad_points: int, method: str = "fd"):
    # Periodic trapezoid rule over one full period.
    g_values = np.atleast_1d(np.asarray(g_values, dtype=float))
    T = spec.period
    t = np.arange(quad_points) * (T / quad_points)
    vals = melnikov_integrand(spec, g_values[:, None], t[None, :], method=method)
    return vals.sum(axis=1) * (T / quad_points)


def melnikov_M(spec: ResonanceSpec, g_i: float, quad_points: int = 4096, check: bool = True,
               method: str = "fd") -> float:
    """Melnikov function at ``g_i``; ``check`` compares against doubled resolution."""
    if quad_points < 256:
        raise ValueError("quad_points must be at least 2**8")
    value = float(_melnikov_many(spec, [g_i], quad_points, method)[0])
    if check:
        fine = float(_melnikov_many(spec, [g_i], 2 * quad_points, method)[0])
        if abs(fine - value) > 1e-8:
            raise QuadratureError(f"M({g_i}) changes by {abs(fine - value):.2e} on doubling quadrature points")
    return value


def converged_M(spec: ResonanceSpec, g_i: float, quad_points: int = 4096, tol: float = 1e-8,
                max_points: int = 2 ** 20):
    """``M(g_i)`` with quadrature doubled until successive values agree to ``tol``.

    Returns ``(value, points_used)``; raises :class:`QuadratureError` when the
    point budget runs out (near-collision orbits).
    """
    n = quad_points
    prev = float(_melnikov_many(spec, [g_i], n)[0])
    while n < max_points:
        n *= 2
        cur = float(_melnikov_many(spec, [g_i], n)[0])
        if abs(cur - prev) <= tol:
            return cur, n
        prev = cur
    raise QuadratureError(f"M({g_i}) not converged with {max_points} points")


def secondary_distance(spec: ResonanceSpec, g_i: float, samples: int = 20000) -> float:
    """Closest approach of the unperturbed orbit to the secondary."""
    t = np.arange(samples) * (spec.period / samples)
    a, e = spec.a, spec.e
    r, f = _anomalies(t / spec.L ** 3, a, e)
    d = np.sqrt(1.0 + r * r - 2.0 * r * np.cos(g_i - t + f))
    i = int(np.argmin(d))
    # polish the sampled minimum on a finer local grid
    tt = t[i] + np.linspace(-1.0, 1.0, 2001) * (spec.period / samples)
    r, f = _anomalies(tt / spec.L ** 3, a, e)
    return float(np.min(np.sqrt(1.0 + r * r - 2.0 * r * np.cos(g_i - tt + f))))


def resolving_points(spec: ResonanceSpec, distance: float, quad_points: int = 4096) -> int:
    """Power-of-two point count whose spacing resolves a close approach of ``distance``."""
    need = 16.0 * spec.period / max(distance, COLLISION_DISTANCE)
    n = quad_points
    while n < need:
        n *= 2
    return n


def _bisect(f, lo, hi, tol, flo=None):
    flo = f(lo) if flo is None else flo
    fhi = f(hi)
    if flo == 0.0:
        return lo
    if flo * fhi > 0.0:
        return None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class MelnikovZero:
    g: float
    slope: float
    simple: bool


def melnikov_curve(spec: ResonanceSpec, grid: int = 720, quad_points: int = 4096, span: float | None = None,
                   method: str = "fd"):
    """Samples ``(g, M(g))`` on ``[0, span)``, default one period ``2 pi / n``."""
    span = TWO_PI / spec.n if span is None else span
    g = np.arange(grid) * (span / grid)
    return g, _melnikov_many(spec, g, quad_points, method)


def find_melnikov_zeros(spec: ResonanceSpec, grid: int = 720, quad_points: int = 4096,
                        gtol: float = 1e-10, method: str = "analytic") -> list[MelnikovZero]:
    """Zeros of ``M`` in ``[0, 2 pi / n)`` by sign scan plus bisection.

    The scan grid is offset by half a cell so zeros at grid-aligned angles
    (0 and pi/n) fall strictly inside a cell.  Sign changes caused by
    near-collision singularities of the integrand are rejected: a genuine
    zero has a small value of ``M`` at the bisected point.  Candidates on
    orbits with a close approach are re-bisected with enough quadrature
    points to resolve it.  The chain-rule derivative is the default here:
    finite-difference noise (about 1e-11) would shift the zeros of
    small-amplitude ``M`` and defeat the small-value test.
    """
    period = TWO_PI / spec.n
    h = period / grid
    g = -0.5 * h + np.arange(grid + 1) * h
    M = _melnikov_many(spec, g, quad_points, method)
    scale = float(np.max(np.abs(M)))

    def Mf(x):
        return float(_melnikov_many(spec, [x], quad_points, method)[0])

    zeros = []
    for i in range(grid):
        m0, m1 = M[i], M[i + 1]
        if m0 != 0.0 and m0 * m1 >= 0.0:
            continue
        for r in (_bisect(Mf, g[i], g[i + 1], gtol, m0),):
            d = secondary_distance(spec, r)
            if d < COLLISION_DISTANCE:
                continue  # orbit runs through the secondary: integrand is singular
            n_pts = resolving_points(spec, d, quad_points)
            if n_pts != quad_points:
                r = _bisect(lambda x: float(_melnikov_many(spec, [x], n_pts, method)[0]), r - h, r + h, gtol)
                if r is None:
                    continue  # sign change was a quadrature artefact
            value = float(_melnikov_many(spec, [r], n_pts, method)[0])
            if abs(value) > 1e-6 * max(scale, 1e-300):
                continue  # singular sign flip, not a zero
            ds = 1e-6
            mp, mm = _melnikov_many(spec, [r + ds, r - ds], n_pts, method)
            slope = (mp - mm) / (2 * ds)
            gz = r % period
            if period - gz < 10 * gtol:
                gz = 0.0
            if abs(gz) < 10 * gtol:
                gz = 0.0
            zeros.append(MelnikovZero(g=gz, slope=slope, simple=abs(slope) > 1e-6))
    zeros.sort(key=lambda z: z.g)
    merged = []
    for z in zeros:
        if not merged or abs(z.g - merged[-1].g) > 1e-8:
            merged.append(z)
    return merged
