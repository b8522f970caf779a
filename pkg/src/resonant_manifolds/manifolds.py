"""Parameterization of the 1-D stable and unstable manifolds of the period map.

``W(s) = sum_k W_k s**k`` solves ``F(W(s)) = W(lambda s)`` where ``F`` is the
time-``T`` flow.  Order ``k`` follows from the lower orders:

    E_k = [F(W_{<k}(s)) - W_{<k}(lambda s)]_k          (jet transport)
    (DF(x0) - lambda**k I) W_k = -E_k

Coefficients are stored with the scale factor ``alpha`` already applied
(``W_1 = alpha * v`` for a unit eigenvector ``v``).  Parameter values quoted
to users are *normalized*: ``sigma = alpha * s`` is the parameter of the
unit-eigenvector expansion, so domains and labels are comparable across
scalings.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .continuation import ResonantOrbit
from .dynamics import REVERSAL, CollisionError
from .jets import Jet4, jet_eval
from .propagation import IntegrationError, IntegratorConfig, flow_jet, flow_state, monodromy

log = logging.getLogger(__name__)

# Jet coefficients swell near close flybys; the integrator error is relative
# to those transient sizes, so manifold work runs a decade tighter.
MANIFOLD_CONFIG = IntegratorConfig(abs_tol=1e-14, rel_tol=1e-14)

MAX_CONDITION = 1e12
COEFF_BOUND = 1e3
ORDER_TOL = 1e-10
TRIAL_DEGREE = 8
MAX_HALVINGS = 40
DOMAIN_SAMPLES = 32
DOMAIN_RTOL = 1e-3
DOMAIN_START = 1e-8


class ManifoldError(RuntimeError):
    """The order-``k`` solve failed (singular system or jet-transport blow-up)."""

    def __init__(self, message: str, order: int):
        super().__init__(message)
        self.order = order


@dataclass
class ManifoldExpansion:
    orbit: ResonantOrbit
    kind: str
    lam: float
    coeffs: np.ndarray  # shape (degree + 1, 4)
    alpha: float
    domain_D: float = float("nan")  # raw parameter units
    e_tol: float = float("nan")
    # (k, max |E_j| over 1 <= j < k, |E_0|) from the order-k jet transport
    order_residuals: list = field(default_factory=list)

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def normalized_domain(self) -> float:
        return self.domain_D * abs(self.alpha)

    def __call__(self, s) -> np.ndarray:
        """Evaluate at raw parameter ``s``."""
        s = float(s)
        return np.array([jet_eval(self.coeffs[:, i].copy(), s) for i in range(4)])

    def at_sigma(self, sigma) -> np.ndarray:
        """Evaluate at normalized parameter ``sigma = alpha * s``."""
        return self(sigma / self.alpha)

    def truncate(self, degree: int) -> ManifoldExpansion:
        return replace(self, coeffs=self.coeffs[: degree + 1].copy(), domain_D=float("nan"),
                       order_residuals=[r for r in self.order_residuals if r[0] <= degree])

    def rescale(self, factor: float) -> ManifoldExpansion:
        """The expansion of ``W(factor * s)``: coefficients times ``factor**k``."""
        k = np.arange(self.degree + 1)[:, None]
        return replace(self, coeffs=self.coeffs * float(factor) ** k, alpha=self.alpha * factor,
                       domain_D=self.domain_D / abs(factor))


def _branch(orbit: ResonantOrbit, kind: str):
    if kind == "stable":
        lam, v = orbit.lambda_s, orbit.v_s
    elif kind == "unstable":
        lam, v = orbit.lambda_u, orbit.v_u
    else:
        raise ValueError(f"kind must be 'stable' or 'unstable', got {kind!r}")
    if orbit.stability != "hyperbolic" or isinstance(lam, complex):
        raise ValueError(f"orbit is {orbit.stability}: no real invariant manifolds")
    return float(lam), np.asarray(v, dtype=float)


def solve_expansion(orbit: ResonantOrbit, kind: str = "stable", degree: int = 25,
                    alpha: float | None = None, cfg: IntegratorConfig = MANIFOLD_CONFIG) -> ManifoldExpansion:
    """Order-by-order solution of the invariance equation up to ``degree``.

    ``alpha=None`` picks the scale automatically (see :func:`auto_alpha`).
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    lam, v = _branch(orbit, kind)
    if alpha is None:
        alpha = auto_alpha(orbit, kind, cfg=cfg)
    DF = monodromy(orbit.point, orbit.period, orbit.mu, cfg)
    W = np.zeros((degree + 1, 4))
    W[0] = orbit.point
    W[1] = alpha * v
    history = []
    eye = np.eye(4)
    for k in range(2, degree + 1):
        jet = np.zeros((4, k + 1))
        jet[:, :k] = W[:k].T
        try:
            image = flow_jet(Jet4(jet), orbit.period, orbit.mu, cfg).coeffs
        except (IntegrationError, CollisionError) as exc:
            raise ManifoldError(f"jet transport failed at order {k} ({exc}); try a smaller alpha", k) from exc
        E = image.copy()
        E[:, :k] -= (W[:k] * lam ** np.arange(k)[:, None]).T
        history.append((k, float(np.max(np.abs(E[:, 1:k]))), float(np.max(np.abs(E[:, 0])))))
        A = DF - lam ** k * eye
        cond = np.linalg.cond(A)
        if not cond < MAX_CONDITION:
            raise ManifoldError(f"order {k}: DF - lambda^k I has condition {cond:.2e}", k)
        W[k] = lu_solve(lu_factor(A), -E[:, k])
        if not np.all(np.isfinite(W[k])):
            raise ManifoldError(f"order {k}: non-finite coefficients; try a smaller alpha", k)
    return ManifoldExpansion(orbit=orbit, kind=kind, lam=lam, coeffs=W, alpha=float(alpha),
                             order_residuals=history)


def auto_alpha(orbit: ResonantOrbit, kind: str = "stable", trial_degree: int = TRIAL_DEGREE,
               bound: float = COEFF_BOUND, order_tol: float = ORDER_TOL,
               cfg: IntegratorConfig = MANIFOLD_CONFIG) -> float:
    """Scale so that ``|W_k| <= bound`` and the order checks stay below ``order_tol``.

    A trial solve at ``alpha = 1`` gives a geometric fit ``|W_k| ~ c rho**k``
    from which a first ``alpha`` keeps every coefficient below ``bound``.
    ``alpha`` is then halved until the trial's low-order residuals (which
    scale like ``alpha**j``) fall below ``order_tol``.
    """
    trial = solve_expansion(orbit, kind, trial_degree, alpha=1.0, cfg=cfg)
    k = np.arange(2, trial_degree + 1)
    norms = np.linalg.norm(trial.coeffs[2:], axis=1)
    slope, intercept = np.polyfit(k, np.log(norms), 1)
    rho, c = math.exp(slope), math.exp(intercept)
    # c (alpha rho)**k peaks at k = 2 once alpha rho <= 1
    alpha = min(1.0, math.sqrt(bound / c)) / rho
    for _ in range(MAX_HALVINGS):
        try:
            trial = solve_expansion(orbit, kind, trial_degree, alpha=alpha, cfg=cfg)
        except ManifoldError:
            alpha *= 0.5
            continue
        coeff_ok = np.all(np.linalg.norm(trial.coeffs[2:], axis=1) <= bound)
        if coeff_ok and max(r[1] for r in trial.order_residuals) <= order_tol:
            return float(alpha)
        alpha *= 0.5
    raise ManifoldError("no scale factor meets the coefficient and order-residual targets", trial_degree)


def unstable_from_stable(ws: ManifoldExpansion) -> ManifoldExpansion:
    """Time-reversal image ``R W^s`` of a stable expansion, with eigenvalue ``1/lambda_s``."""
    if ws.kind != "stable":
        raise ValueError("expected a stable expansion")
    if ws.orbit.point[1] != 0.0:
        raise ValueError("orbit point must lie on y = 0 for the reversal symmetry")
    return replace(ws, kind="unstable", lam=1.0 / ws.lam, coeffs=ws.coeffs * REVERSAL,
                   order_residuals=list(ws.order_residuals))


def stable_from_unstable(wu: ManifoldExpansion) -> ManifoldExpansion:
    if wu.kind != "unstable":
        raise ValueError("expected an unstable expansion")
    return replace(wu, kind="stable", lam=1.0 / wu.lam, coeffs=wu.coeffs * REVERSAL,
                   order_residuals=list(wu.order_residuals))


def invariance_residual(w: ManifoldExpansion, s: float, cfg: IntegratorConfig = MANIFOLD_CONFIG) -> float:
    """Invariance error at raw parameter ``s``, by pointwise flow.

    Stable expansions use ``|Phi_T(W(s)) - W(lambda s)|``; unstable ones use
    the equivalent backward form ``|Phi_-T(W(s)) - W(s / lambda)|`` so the
    polynomial is never evaluated outside ``|s|``.
    """
    orbit = w.orbit
    if w.kind == "stable":
        image = flow_state(w(s), orbit.period, orbit.mu, cfg)
        return float(np.linalg.norm(image - w(w.lam * s)))
    image = flow_state(w(s), -orbit.period, orbit.mu, cfg)
    return float(np.linalg.norm(image - w(s / w.lam)))


def _all_ok(w, lo, hi, e_tol, cfg, samples):
    for s in np.linspace(lo, hi, samples + 1)[1:]:
        for sign in (1.0, -1.0):
            try:
                if not invariance_residual(w, sign * s, cfg) <= e_tol:
                    return False
            except (IntegrationError, CollisionError):
                return False
    return True


def fundamental_domain(w: ManifoldExpansion, e_tol: float = 1e-5, cfg: IntegratorConfig = MANIFOLD_CONFIG,
                       samples: int = DOMAIN_SAMPLES, rtol: float = DOMAIN_RTOL) -> float:
    """Largest ``D`` with invariance residual ``<= e_tol`` on sampled ``|s| <= D``.

    Geometric bracketing (doubling) from a tiny normalized radius, then
    bisection to relative width ``rtol``; each candidate interval is
    sampled at ``samples`` points on both signs.  Stores and returns the raw
    ``D`` (``w.normalized_domain`` gives ``alpha * D``).
    """
    start = DOMAIN_START / abs(w.alpha)
    if not _all_ok(w, 0.0, start, e_tol, cfg, 4):
        w.domain_D, w.e_tol = 0.0, e_tol
        return 0.0
    good, bad = start, None
    while bad is None:
        if good > 1e6 / abs(w.alpha):
            break  # effectively unbounded
        if _all_ok(w, good, 2.0 * good, e_tol, cfg, samples):
            good *= 2.0
        else:
            bad = 2.0 * good
    while bad is not None and bad - good > rtol * good:
        mid = 0.5 * (good + bad)
        if _all_ok(w, good, mid, e_tol, cfg, samples):
            good = mid
        else:
            bad = mid
    w.domain_D, w.e_tol = good, e_tol
    return good


def order_check(w: ManifoldExpansion) -> float:
    """Largest residual coefficient below the current order seen during the solve."""
    return max((max(low, const) for _, low, const in w.order_residuals), default=0.0)
