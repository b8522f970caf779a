"""Continuation of Keplerian resonant orbits from ``mu = 0`` to a target mass ratio.

Each homotopy step solves ``Phi_T(x, 0, vx, vy) - (x, 0, vx, vy) = 0`` for
``(x, vx, vy, T)`` with a damped Gauss-Newton (Levenberg-Marquardt) solver
and the variational Jacobian.  The system has a one-dimensional kernel (the
orbit family is parametrised by energy), so the solver lands on the family
member nearest the predictor; the energy is pinned afterwards, if wanted,
by :func:`match_jacobi`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from .dynamics import CollisionError, check_mu, jacobi_constant, vector_field
from .melnikov import ResonanceSpec, SynodicDelaunay, delaunay_to_cartesian
from .propagation import (
    DEFAULT_CONFIG,
    IntegrationError,
    IntegratorConfig,
    flow_state,
    flow_variational,
    monodromy,
    next_section_crossing,
    trajectory,
)

log = logging.getLogger(__name__)

ACCEPT_RESIDUAL = 1e-9
NEWTON_STEP_TOL = 1e-12
NEWTON_MAX_EVALS = 200
MAX_HALVINGS = 12
UNIT_EIG_TOL = 1e-6


class ContinuationError(RuntimeError):
    """Newton failed at some homotopy step even after step halving."""

    def __init__(self, message: str, step: int, mu: float):
        super().__init__(message)
        self.step = step
        self.mu = mu


@dataclass
class ContinuationRun:
    spec: ResonanceSpec
    g_seed: float = 0.0
    mu_target: float = 0.0
    N: int = 100
    jacobi: float | None = None  # held along the homotopy; None: the seed's value at mu = 0
    history: list = field(default_factory=list)  # (mu_k, state, period, residual)


@dataclass
class ResonantOrbit:
    point: np.ndarray
    period: float
    mu: float
    lambda_u: complex
    lambda_s: complex
    v_u: np.ndarray
    v_s: np.ndarray
    label: ResonanceSpec
    g_seed: float = 0.0
    residual: float = float("nan")
    stability: str = "hyperbolic"

    @property
    def jacobi(self) -> float:
        return jacobi_constant(self.point, self.mu)

    @property
    def section_sign(self) -> int:
        return 1 if self.point[3] > 0 else -1


def seed_orbit(spec: ResonanceSpec, g_seed: float = 0.0):
    """Unperturbed resonant state at ``l = 0`` and its period ``2 pi m``.

    ``g_seed = 0`` puts periapsis on the positive x-axis.  For ``g_seed = pi/n``
    the Kepler orbit is flowed (at ``mu = 0``) to its first ``y = 0``
    crossing so the seed still lies on the section.
    """
    if not (g_seed == 0.0 or math.isclose(g_seed, math.pi / spec.n, rel_tol=0, abs_tol=1e-12)):
        raise ValueError(f"g_seed must be 0 or pi/n, got {g_seed}")
    state = delaunay_to_cartesian(SynodicDelaunay(spec.L, spec.G, 0.0, g_seed))
    if g_seed != 0.0:
        state = _first_y_crossing(state, 0.0, DEFAULT_CONFIG)
        state[1] = 0.0
    return state, spec.period


def _first_y_crossing(state, mu, cfg):
    # any x, either vy sign: take the nearer of the two filtered crossings
    best = None
    for vy_sign in (1, -1):
        try:
            ev = next_section_crossing(state, 1, vy_sign, mu, cfg, tmax=50.0, x_max=np.inf)
        except IntegrationError:
            continue
        if best is None or ev.time < best.time:
            best = ev
    if best is None:
        raise IntegrationError("no y = 0 crossing found for seed")
    return best.state.copy()


def _residual(z, mu, cfg, want_jacobian=True, jacobi=None):
    x, vx, vy, T = z
    s = np.array([x, 0.0, vx, vy])
    if want_jacobian:
        phi, stm = flow_variational(s, T, mu, cfg)
    else:
        phi, stm = flow_state(s, T, mu, cfg), None
    F = phi - s
    if jacobi is not None:
        F = np.append(F, jacobi_constant(s, mu) - jacobi)
    if stm is None:
        return F, None
    J = np.zeros((F.size, 4))
    J[:4, :3] = stm[:, [0, 2, 3]]
    J[0, 0] -= 1.0
    J[2, 1] -= 1.0
    J[3, 2] -= 1.0
    J[:4, 3] = vector_field(phi, mu)
    if jacobi is not None:
        # C = 2 U - v^2 and U_x = ax - 2 vy on y = 0
        ax = vector_field(s, mu)[2]
        J[4, :3] = [2.0 * (ax - 2.0 * vy), -2.0 * vx, -2.0 * vy]
    return F, J


def newton_periodic(z0, mu: float, cfg: IntegratorConfig = DEFAULT_CONFIG,
                    max_nfev: int = NEWTON_MAX_EVALS, jacobi: float | None = None):
    """Polish ``z = (x, vx, vy, T)``; returns ``(z, residual, evaluations)``.

    Levenberg-Marquardt (MINPACK) on the periodicity residual with the
    variational Jacobian.  Its damping tames the near-degenerate kernel at
    small ``mu``; near a solution it reduces to Gauss-Newton.  With
    ``jacobi`` set, an energy row pins the family member and the system
    has full rank.  ``residual`` is the periodicity error alone; the caller
    decides whether it is acceptable.
    """
    cache = {}

    def evaluate(z):
        key = z.tobytes()
        if key not in cache:
            cache.clear()
            try:
                cache[key] = _residual(z, mu, cfg, jacobi=jacobi)
            except (IntegrationError, CollisionError):
                rows = 4 if jacobi is None else 5
                cache[key] = (np.ones(rows), np.eye(rows, 4))  # push the trust region back
        return cache[key]

    z0 = np.array(z0, dtype=float)
    sol = least_squares(lambda z: evaluate(z)[0], z0, jac=lambda z: evaluate(z)[1], method="lm",
                        xtol=NEWTON_STEP_TOL, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    try:
        r = float(np.linalg.norm(_residual(sol.x, mu, cfg, want_jacobian=False)[0][:4]))
    except (IntegrationError, CollisionError):
        r = math.inf
    return sol.x, r, sol.nfev


def _state(z):
    return np.array([z[0], 0.0, z[1], z[2]])


def continue_orbit(run: ContinuationRun, cfg: IntegratorConfig = DEFAULT_CONFIG,
                   place_on_symmetric_crossing: bool = True) -> ResonantOrbit:
    """Homotopy ``mu_k = k mu / N`` with a secant predictor and step halving."""
    mu_target = check_mu(run.mu_target)
    if run.N < 1:
        raise ValueError("N must be >= 1")
    s0, T0 = seed_orbit(run.spec, run.g_seed)
    C_pin = jacobi_constant(s0, 0.0) if run.jacobi is None else float(run.jacobi)
    z_prev = np.array([s0[0], s0[2], s0[3], T0])
    run.history = [(0.0, _state(z_prev), T0, 0.0)]
    mu_prev, z_old, mu_old = 0.0, None, None
    dmu = mu_target / run.N
    k = 0
    halvings = 0
    while mu_prev < mu_target:
        mu_k = min(mu_prev + dmu, mu_target)
        if mu_target - mu_k < 1e-3 * dmu:
            mu_k = mu_target
        if z_old is None:
            guess = z_prev.copy()
        else:
            guess = z_prev + (z_prev - z_old) * ((mu_k - mu_prev) / (mu_prev - mu_old))
        z, r, _ = newton_periodic(guess, mu_k, cfg, jacobi=C_pin)
        if r < ACCEPT_RESIDUAL:
            k += 1
            run.history.append((mu_k, _state(z), float(z[3]), r))
            z_old, mu_old = z_prev, mu_prev
            z_prev, mu_prev = z, mu_k
            if halvings:
                halvings -= 1
                dmu = min(2 * dmu, mu_target / run.N)
            continue
        halvings += 1
        if halvings > MAX_HALVINGS:
            raise ContinuationError(
                f"Newton did not converge at step {k + 1} (mu={mu_k:.6e}, residual={r:.2e}); "
                "try more homotopy steps", step=k + 1, mu=mu_k)
        dmu *= 0.5
        log.info("halving homotopy step at mu=%.6e (residual %.2e)", mu_k, r)
    z = z_prev
    if place_on_symmetric_crossing:
        z = _to_symmetric_crossing(z, mu_target, cfg, C_pin)
    return make_orbit(_state(z), float(z[3]), mu_target, run.spec, run.g_seed, cfg)


def _to_symmetric_crossing(z, mu, cfg, jacobi=None):
    """Move the periodic point to the ``x < 0`` crossing near half a period.

    Orbits continued from symmetric seeds are time-reversal symmetric; their
    second perpendicular crossing sits at ``T/2``.  The point is re-polished
    after the move.
    """
    s, T = _state(z), float(z[3])
    probe = flow_state(s, 0.5 * T - 0.05, mu, cfg)
    sign = 1 if flow_state(s, 0.5 * T, mu, cfg)[3] > 0 else -1
    ev = next_section_crossing(probe, 1, sign, mu, cfg, tmax=T)
    z_new, r, _ = newton_periodic([ev.state[0], ev.state[2], ev.state[3], T], mu, cfg, jacobi=jacobi)
    if r >= ACCEPT_RESIDUAL:
        raise ContinuationError(f"re-polish at symmetric crossing failed (residual {r:.2e})", -1, mu)
    return z_new


def eigen_data(M: np.ndarray):
    """Classify the monodromy spectrum and return oriented unit eigenvectors.

    Returns ``(stability, lambda_u, lambda_s, v_u, v_s)``.  The two
    eigenvalues furthest from 1 form the non-trivial pair.
    """
    w, V = np.linalg.eig(M)
    order = np.argsort(-np.abs(w - 1.0))
    i, j = order[0], order[1]
    wi, wj = w[i], w[j]
    if abs(wi.imag) < 1e-12 and abs(wj.imag) < 1e-12:
        wi, wj = wi.real, wj.real
        if abs(wi) < abs(wj):
            i, j, wi, wj = j, i, wj, wi
        stability = "hyperbolic" if wi > 0 else "reflection-hyperbolic"
        return stability, float(wi), float(wj), orient(V[:, i].real), orient(V[:, j].real)
    stability = "elliptic" if abs(abs(wi) - 1.0) < UNIT_EIG_TOL else "complex-unstable"
    return stability, complex(wi), complex(wj), V[:, i], V[:, j]


def orient(v: np.ndarray) -> np.ndarray:
    """Unit vector with positive ``vy`` component (ties: positive ``x``)."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    key = v[3] if abs(v[3]) > 1e-14 else v[0]
    return -v if key < 0 else v


def make_orbit(point, period, mu, spec, g_seed=0.0, cfg: IntegratorConfig = DEFAULT_CONFIG) -> ResonantOrbit:
    point = np.array(point, dtype=float)
    point[1] = 0.0
    resid = float(np.linalg.norm(flow_state(point, period, mu, cfg) - point))
    stability, lu, ls, vu, vs = eigen_data(monodromy(point, period, mu, cfg))
    return ResonantOrbit(point=point, period=float(period), mu=mu, lambda_u=lu, lambda_s=ls,
                         v_u=vu, v_s=vs, label=spec, g_seed=g_seed, residual=resid,
                         stability=stability)


def tisserand_eccentricity(spec: ResonanceSpec, C: float) -> float:
    """Eccentricity of the ``mu = 0`` prograde ellipse with Jacobi constant ``C``."""
    a = spec.a
    k = 0.5 * (C - 1.0 / a)
    arg = 1.0 - k * k / a
    if k <= 0 or arg < 0:
        raise ValueError(f"no prograde {spec.label} ellipse has Jacobi constant {C}")
    return math.sqrt(arg)


def match_jacobi(spec: ResonanceSpec, C_target: float, mu: float, g_seed: float = 0.0, N: int = 100,
                 cfg: IntegratorConfig = DEFAULT_CONFIG, tol: float = 1e-12, max_iter: int = 30,
                 e0: float | None = None) -> tuple[ResonantOrbit, float]:
    """Secant iteration on the seed eccentricity so the continued orbit has ``C_target``.

    The homotopy holds the seed's own Jacobi constant, so the Tisserand
    eccentricity is usually already the answer and the secant stops after
    one evaluation.  Returns ``(orbit, e)``.  Stops when ``|C - C_target| < tol`` or when the
    secant step stagnates at the noise level of the continuation.
    """
    def final(e):
        run = ContinuationRun(replace(spec, e=e), g_seed, mu, N)
        orbit = continue_orbit(run, cfg, place_on_symmetric_crossing=False)
        return orbit, orbit.jacobi - C_target

    e_a = tisserand_eccentricity(spec, C_target) if e0 is None else e0
    orb_a, f_a = final(e_a)
    best = (abs(f_a), e_a, orb_a)
    if best[0] < tol:
        max_iter = 0
    else:
        e_b = e_a + 1e-3
        orb_b, f_b = final(e_b)
        best = min([best, (abs(f_b), e_b, orb_b)], key=lambda t: t[0])
    for _ in range(max_iter):
        if best[0] < tol or f_b == f_a:
            break
        e_c = e_b - f_b * (e_b - e_a) / (f_b - f_a)
        if abs(e_c - e_b) < 1e-15:
            break
        orb_c, f_c = final(e_c)
        if abs(f_c) < best[0]:
            best = (abs(f_c), e_c, orb_c)
        e_a, f_a, e_b, f_b = e_b, f_b, e_c, f_c
    _, e, orbit = best
    z = np.array([orbit.point[0], orbit.point[2], orbit.point[3], orbit.period])
    z = _to_symmetric_crossing(z, mu, cfg, C_target)
    return make_orbit(_state(z), float(z[3]), mu, replace(spec, e=e), g_seed, cfg), e


def winding_number(orbit: ResonantOrbit, cfg: IntegratorConfig = DEFAULT_CONFIG) -> int:
    """Net synodic revolutions about the primary over one period.

    An ``n:m`` orbit winds ``n - m`` times: ``n`` inertial revolutions
    minus the ``m`` turns of the frame.
    """
    ts, ys = trajectory(orbit.point, orbit.period, orbit.mu, cfg)
    ang = np.unwrap(np.arctan2(ys[:, 1], ys[:, 0] + orbit.mu))
    turns = (ang[-1] - ang[0]) / (2 * math.pi)
    k = round(turns)
    if abs(turns - k) > 1e-6:
        raise IntegrationError(f"orbit does not close: {turns:.9f} turns")
    return int(k)
