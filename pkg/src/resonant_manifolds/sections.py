"""Manifold curves on the Poincare section ``y = 0, x < 0`` and their globalization.

A section curve stores samples ``W_p(sigma)`` keyed by the normalized
parameter ``sigma = alpha * s``.  Samples with ``|sigma|`` beyond the
fundamental domain are produced by return maps: ``P+`` multiplies ``sigma`` by
``lambda`` on an unstable curve, ``P-`` divides it by ``lambda`` on a stable
one.  Each sample keeps the number of return-map iterates that produced it.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import CollisionError, DomainError, jacobi_constant, vector_field
from .manifolds import MANIFOLD_CONFIG, ManifoldExpansion
from .propagation import (IntegrationError, IntegratorConfig, NoCrossingError, flow_variational,
                          next_section_crossing)

log = logging.getLogger(__name__)

DEFAULT_GRID = 2000
DEAD_ZONE = 1e-3
J_ABS = 0.05
J_REL = 10.0
THREADS_ENV = "RESONANT_THREADS"


_threads_override: int | None = None


def set_threads(n: int | None) -> None:
    """Cap worker threads for per-sample maps (``None`` restores the environment default)."""
    global _threads_override
    if n is not None and n < 1:
        raise ValueError("threads must be >= 1")
    _threads_override = n


def default_threads() -> int:
    if _threads_override is not None:
        return _threads_override
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


class ProjectionError(RuntimeError):
    """A manifold point has no admissible section crossing within one period."""


@dataclass
class SectionCurve:
    """One branch (``sigma > 0`` or ``sigma < 0``) of a manifold on the section."""

    s: np.ndarray
    x: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    iterates: np.ndarray
    lam: float
    C: float
    mu: float
    branch: int
    kind: str
    meta: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)  # (sigma, reason)

    def __post_init__(self):
        order = np.argsort(np.abs(self.s), kind="stable")
        for name in ("s", "x", "vx", "vy", "iterates"):
            setattr(self, name, np.asarray(getattr(self, name))[order])
        self.iterates = self.iterates.astype(int)

    def __len__(self):
        return self.s.size

    @property
    def points(self) -> np.ndarray:
        """``(x, xdot)`` pairs, the coordinates used for intersections."""
        return np.column_stack([self.x, self.vx])

    def states(self) -> np.ndarray:
        return np.column_stack([self.x, np.zeros_like(self.x), self.vx, self.vy])

    @property
    def linked(self) -> np.ndarray:
        return link_flags(self.points)


def link_flags(points: np.ndarray, j_abs: float = J_ABS, j_rel: float = J_REL) -> np.ndarray:
    """``True`` for each gap between consecutive samples that is not a break.

    A gap is a break when it is longer than ``j_abs`` or more than ``j_rel``
    times the previous gap.
    """
    if len(points) < 2:
        return np.zeros(0, dtype=bool)
    gaps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    linked = gaps <= j_abs
    linked[1:] &= gaps[1:] <= j_rel * gaps[:-1]
    return linked


def _map(fn, items, threads):
    threads = default_threads() if threads is None else threads
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


_SEC = [0, 2, 3]  # section coordinates (x, xdot, ydot)


def section_derivative(state, direction: int, sign: int, period: float, mu: float,
                       cfg: IntegratorConfig = MANIFOLD_CONFIG) -> np.ndarray:
    """3x3 derivative of the first return (``direction`` +1 for ``P+``, -1 for ``P-``).

    ``DP = (I - f e_y^T / f_y) Phi`` at the return, restricted to ``(x, xdot, ydot)``.
    """
    ev = next_section_crossing(state, direction, sign, mu, cfg, tmax=1.5 * period)
    _, stm = flow_variational(state, ev.time, mu, cfg)
    f = vector_field(ev.state, mu)
    DP = (np.eye(4) - np.outer(f, [0.0, 1.0, 0.0, 0.0]) / f[1]) @ stm
    return DP[np.ix_(_SEC, _SEC)]


def _energy_fix(state, C, mu, DP=None):
    """Restore the Jacobi constant ``C`` by a small shift within the section.

    Off-manifold errors grow under the return map that contracts along the
    manifold, so the shift is kept orthogonal to that map's most expanded
    direction (top right singular vector of ``DP``).  Without ``DP`` only
    ``ydot`` moves.
    """
    out = np.array(state, dtype=float)
    out[1] = 0.0
    avoid = None if DP is None else np.linalg.svd(DP)[2][0]
    for _ in range(8):
        dC = jacobi_constant(out, mu) - C
        if abs(dC) < 1e-15:
            break
        grad = np.array([2.0 * _ux(out, mu), -2.0 * out[2], -2.0 * out[3]])
        step = np.array([0.0, 0.0, grad[2]])
        if avoid is not None:
            perp = grad - (grad @ avoid) * avoid
            if abs(grad @ perp) > 1e-3 * (grad @ grad):
                step = perp
        out[_SEC] -= dC / (grad @ step) * step
    return out


def _project(w: ManifoldExpansion, sigma: float, cfg: IntegratorConfig) -> np.ndarray:
    """Energy-corrected section crossing of ``W(sigma)`` (iterate 0)."""
    orbit = w.orbit
    sign = orbit.section_sign
    state, _ = to_section(w.at_sigma(sigma), orbit.period, sign, orbit.mu, cfg)
    if abs(jacobi_constant(state, orbit.mu) - orbit.jacobi) < 1e-14:
        return _energy_fix(state, orbit.jacobi, orbit.mu)
    contracting = 1 if w.kind == "stable" else -1
    try:
        DP = section_derivative(state, contracting, sign, orbit.period, orbit.mu, cfg)
    except (NoCrossingError, IntegrationError, CollisionError):
        DP = None
    return _energy_fix(state, orbit.jacobi, orbit.mu, DP)


def _ux(state, mu):
    # dU/dx on y = 0: the x-acceleration minus the Coriolis term
    return vector_field(state, mu)[2] - 2.0 * state[3]


def to_section(state, period: float, sign: int, mu: float, cfg: IntegratorConfig = MANIFOLD_CONFIG):
    """Nearest admissible crossing in time, searching forward and backward.

    The direction that ``y`` is heading towards zero is tried first; the
    other direction is then only searched up to the time already found.
    Returns ``(crossing_state, time)``.
    """
    state = np.asarray(state, dtype=float)
    first = -1 if state[1] * state[3] > 0 else 1
    best = None
    for direction in (first, -first):
        tmax = period if best is None else abs(best[1])
        try:
            ev = next_section_crossing(state, direction, sign, mu, cfg, tmax=tmax)
        except NoCrossingError:
            continue
        if best is None or abs(ev.time) < abs(best[1]):
            best = (ev.state, ev.time)
    if best is None:
        raise ProjectionError("no admissible crossing within one period")
    return best


def _return(state, direction, sign, period, mu, cfg):
    # first return after leaving the section; a period bound with slack
    return next_section_crossing(state, direction, sign, mu, cfg, tmax=1.5 * period).state


def section_point(w: ManifoldExpansion, sigma: float, cfg: IntegratorConfig = MANIFOLD_CONFIG):
    """``W_p(sigma)`` for any ``sigma``, via its fundamental-domain preimage.

    Returns ``(state, iterates)``.  The preimage ``sigma / Lambda**k`` (with
    ``Lambda`` the expansion factor of the globalizing map) is projected from
    the polynomial, then ``k`` return maps are applied.
    """
    orbit = w.orbit
    D = w.normalized_domain
    if not D > 0:
        raise ValueError("expansion has no fundamental domain; run fundamental_domain first")
    big = w.lam if w.kind == "unstable" else 1.0 / w.lam
    k = 0 if abs(sigma) <= D else math.ceil(math.log(abs(sigma) / D) / math.log(big) - 1e-12)
    sigma0 = sigma / big ** k
    sign = orbit.section_sign
    state = _project(w, sigma0, cfg)
    direction = 1 if w.kind == "unstable" else -1
    for _ in range(k):
        state = _return(state, direction, sign, orbit.period, orbit.mu, cfg)
    return state, k


def sigma_grid(D: float, grid: int = DEFAULT_GRID, branch: int = 1) -> np.ndarray:
    """Uniform samples of ``[dead_zone * D, D]`` on one branch."""
    return branch * np.linspace(DEAD_ZONE * D, D, grid)


def project_to_section(w: ManifoldExpansion, grid: int = DEFAULT_GRID, branch: int = 1,
                       cfg: IntegratorConfig = MANIFOLD_CONFIG, threads: int | None = None) -> SectionCurve:
    """Project one branch of the fundamental domain onto the section (iterate 0)."""
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    D = w.normalized_domain
    if not D > 0:
        raise ValueError("expansion has no fundamental domain; run fundamental_domain first")
    sigmas = sigma_grid(D, grid, branch)

    def one(sig):
        try:
            return sig, _project(w, sig, cfg), None
        except (ProjectionError, IntegrationError, CollisionError, DomainError) as exc:
            return sig, None, str(exc)

    results = _map(one, sigmas, threads)
    return _assemble(w, results, np.zeros(len(results), dtype=int), branch)


def _assemble(w, results, iters, branch, base: SectionCurve | None = None):
    keep = [(r, k) for r, k in zip(results, iters) if r[1] is not None]
    failures = [(float(r[0]), r[2]) for r in results if r[1] is None]
    for sig, reason in failures:
        log.warning("section sample sigma=%.6g dropped: %s", sig, reason)
    s = np.array([r[0] for r, _ in keep])
    st = np.array([r[1] for r, _ in keep]).reshape(-1, 4)
    it = np.array([k for _, k in keep], dtype=int)
    if base is not None:
        s = np.concatenate([base.s, s])
        st = np.concatenate([base.states(), st])
        it = np.concatenate([base.iterates, it])
        failures = base.failures + failures
    orbit = w.orbit
    meta = {"resonance": orbit.label.label, "kind": w.kind, "alpha": w.alpha,
            "domain": w.normalized_domain, "e_tol": w.e_tol, "degree": w.degree}
    return SectionCurve(s=s, x=st[:, 0], vx=st[:, 2], vy=st[:, 3], iterates=it, lam=w.lam,
                        C=orbit.jacobi, mu=orbit.mu, branch=branch, kind=w.kind, meta=meta,
                        failures=failures)


def globalize(curve: SectionCurve, w: ManifoldExpansion, iterations: int,
              cfg: IntegratorConfig = MANIFOLD_CONFIG, threads: int | None = None) -> SectionCurve:
    """Extend ``curve`` by ``iterations`` return maps of its fundamental annulus.

    Unstable curves use ``P+`` (labels times ``lambda``); stable ones ``P-``
    (labels divided by ``lambda``).  Only iterate-0 samples with
    ``|sigma| > D / Lambda`` seed the iteration, so successive images tile
    the parameter line without overlap.  Failed points are recorded in
    ``failures`` and dropped with their later images.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    orbit = w.orbit
    big = w.lam if w.kind == "unstable" else 1.0 / w.lam
    direction = 1 if w.kind == "unstable" else -1
    sign = orbit.section_sign
    D = w.normalized_domain
    seed = (curve.iterates == 0) & (np.abs(curve.s) > D / big)
    current = [(float(sg), st) for sg, st in zip(curve.s[seed], curve.states()[seed])]
    new_results, new_iters = [], []
    for k in range(1, iterations + 1):
        def one(item):
            sig, st = item
            try:
                return sig * big, _return(st, direction, sign, orbit.period, orbit.mu, cfg), None
            except (IntegrationError, CollisionError, NoCrossingError) as exc:
                return sig * big, None, str(exc)

        results = _map(one, current, threads)
        new_results += results
        new_iters += [k] * len(results)
        current = [(r[0], r[1]) for r in results if r[1] is not None]
    return _assemble(w, new_results, new_iters, curve.branch, base=curve)


def conjugacy_error(w: ManifoldExpansion, sigma: float, cfg: IntegratorConfig = MANIFOLD_CONFIG) -> float:
    """``|P(W_p(sigma)) - W_p(lambda_c sigma)|`` in the contracting direction.

    Stable curves use ``P+`` with ``lambda_c = lambda``; unstable ones use
    ``P-`` with ``lambda_c = 1/lambda``, so both sides stay inside the domain.
    """
    orbit = w.orbit
    sign = orbit.section_sign
    p, _ = section_point(w, sigma, cfg)
    direction = 1 if w.kind == "stable" else -1
    factor = w.lam if w.kind == "stable" else 1.0 / w.lam
    image = _return(p, direction, sign, orbit.period, orbit.mu, cfg)
    target, _ = section_point(w, factor * sigma, cfg)
    return float(np.linalg.norm(image - target))


def max_energy_error(curve: SectionCurve) -> float:
    return max((abs(jacobi_constant(st, curve.mu) - curve.C) for st in curve.states()), default=0.0)


# -- persistence ---------------------------------------------------------------

CSV_HEADER = "s,iterates,x,xdot,ydot"
_META_TYPES = {"alpha": float, "domain": float, "e_tol": float, "degree": int}


def export_curves(curves, path, extra: dict | None = None) -> None:
    """Write the branches of one manifold to a CSV with a ``#`` metadata block.

    Rows are ordered by ``s``; branches are told apart by the sign of ``s``.
    Floats use 17 significant digits (``%.16e``), which round-trips doubles exactly.
    """
    curves = list(curves)
    if not curves:
        raise ValueError("no curves to export")
    ref = curves[0]
    lines = [f"# kind: {ref.kind}", f"# lambda: {ref.lam:.16e}", f"# C: {ref.C:.16e}",
             f"# mu: {ref.mu:.16e}", f"# branches: {','.join(str(c.branch) for c in curves)}"]
    meta = {**ref.meta, **(extra or {})}
    lines += [f"# {k}: {v:.16e}" if isinstance(v, float) else f"# {k}: {v}" for k, v in meta.items()]
    lines.append(CSV_HEADER)
    rows = []
    for c in curves:
        for i in range(len(c)):
            rows.append((c.s[i], c.iterates[i], c.x[i], c.vx[i], c.vy[i]))
    rows.sort(key=lambda r: r[0])
    lines += [f"{s:.16e},{int(k)},{x:.16e},{vx:.16e},{vy:.16e}" for s, k, x, vx, vy in rows]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_curves(path) -> list[SectionCurve]:
    meta, rows = {}, []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            elif line != CSV_HEADER:
                rows.append(line.split(","))
    if not rows or not {"kind", "lambda", "C", "mu"} <= meta.keys():
        raise ValueError(f"{path}: not a section-curve file")
    data = np.array([[float(v) for v in r] for r in rows])
    common = {"lam": float(meta.pop("lambda")), "C": float(meta.pop("C")), "mu": float(meta.pop("mu")),
              "kind": meta.pop("kind")}
    meta.pop("branches", None)
    extra = {k: _META_TYPES.get(k, str)(v) for k, v in meta.items()}
    curves = []
    for branch in (-1, 1):
        sel = np.sign(data[:, 0]) == branch
        if np.any(sel):
            d = data[sel]
            curves.append(SectionCurve(s=d[:, 0], x=d[:, 2], vx=d[:, 3], vy=d[:, 4], iterates=d[:, 1],
                                       branch=branch, meta=dict(extra), **common))
    return curves
