"""Heteroclinic points where an unstable and a stable section curve cross.

Consecutive linked samples of each curve form segments in the ``(x, xdot)``
plane.  Crossing segment pairs are candidates; each is refined by bisecting
both parameter intervals, with every midpoint evaluated from the manifold
expansion and return maps (never by interpolating a chord).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba
import numpy as np

from .dynamics import CollisionError, jacobi_constant
from .manifolds import MANIFOLD_CONFIG, ManifoldExpansion
from .propagation import IntegrationError, IntegratorConfig, NoCrossingError, trajectory
from .sections import J_ABS, J_REL, SectionCurve, _map, link_flags, section_point

log = logging.getLogger(__name__)

TOL_XY = 1e-9
TOL_S = 1e-12
DEDUP = 1e-6
MAX_ROUNDS = 200
NEIGHBOUR_WINDOW = 10  # stored segments searched on each side when a crossing breaks
MAX_NEIGHBOUR_RESETS = 3
JACOBI_MATCH = 1e-9


class JacobiMismatchError(ValueError):
    """The two curves lie on different energy levels."""


@dataclass(frozen=True)
class Segment:
    s_a: float
    s_b: float
    point_a: tuple
    point_b: tuple
    index: int  # position of ``s_a`` in the curve's sample order
    linked: bool = True


@dataclass(frozen=True)
class Candidate:
    u: Segment
    s: Segment
    point: tuple  # chord intersection in (x, xdot)
    collinear: bool = False


@dataclass(frozen=True)
class HeteroclinicConnection:
    state: np.ndarray
    s_u: float
    s_s: float
    residual: float
    rounds: int = 0


@dataclass(frozen=True)
class Outcome:
    status: str  # "connection", "spurious" or "unresolved"
    candidate: Candidate
    connection: HeteroclinicConnection | None = None
    reason: str = ""


def build_segments(curve: SectionCurve, j_abs: float = J_ABS, j_rel: float = J_REL) -> list[Segment]:
    """Segments between consecutive samples, skipping gaps flagged as breaks."""
    if len(curve) == 0:
        raise ValueError("empty curve")
    pts = curve.points
    linked = link_flags(pts, j_abs, j_rel)
    return [Segment(float(curve.s[i]), float(curve.s[i + 1]), tuple(pts[i]), tuple(pts[i + 1]), i)
            for i in range(len(curve) - 1) if linked[i]]


# -- geometric predicates --------------------------------------------------------

@numba.njit(cache=True)
def _orient(ax, ay, bx, by, cx, cy):
    d = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if d > 0.0:
        return 1
    if d < 0.0:
        return -1
    return 0


@numba.njit(cache=True)
def _on_segment(ax, ay, bx, by, cx, cy):
    return min(ax, bx) <= cx <= max(ax, bx) and min(ay, by) <= cy <= max(ay, by)


@numba.njit(cache=True)
def _cross_kind(p, q):
    """0: no intersection, 1: proper crossing, 2: collinear overlap.

    ``p`` and ``q`` are ``[ax, ay, bx, by]``.  Crossings that only touch an
    endpoint count as proper so a crossing through a shared vertex is kept.
    """
    if (max(p[0], p[2]) < min(q[0], q[2]) or max(q[0], q[2]) < min(p[0], p[2])
            or max(p[1], p[3]) < min(q[1], q[3]) or max(q[1], q[3]) < min(p[1], p[3])):
        return 0
    o1 = _orient(p[0], p[1], p[2], p[3], q[0], q[1])
    o2 = _orient(p[0], p[1], p[2], p[3], q[2], q[3])
    o3 = _orient(q[0], q[1], q[2], q[3], p[0], p[1])
    o4 = _orient(q[0], q[1], q[2], q[3], p[2], p[3])
    # all four points on one line; a zero-length chord off the other line is not collinear
    if o1 == 0 and o2 == 0 and o3 == 0 and o4 == 0:
        if (_on_segment(p[0], p[1], p[2], p[3], q[0], q[1]) or _on_segment(p[0], p[1], p[2], p[3], q[2], q[3])
                or _on_segment(q[0], q[1], q[2], q[3], p[0], p[1])):
            return 2
        return 0
    if o1 * o2 <= 0 and o3 * o4 <= 0:
        return 1
    return 0


@numba.njit(cache=True, parallel=True)
def _count_pairs(U, S):
    counts = np.zeros(U.shape[0], dtype=np.int64)
    for i in numba.prange(U.shape[0]):
        c = 0
        for j in range(S.shape[0]):
            if _cross_kind(U[i], S[j]) != 0:
                c += 1
        counts[i] = c
    return counts


@numba.njit(cache=True, parallel=True)
def _fill_pairs(U, S, offsets, out):
    for i in numba.prange(U.shape[0]):
        c = offsets[i]
        for j in range(S.shape[0]):
            kind = _cross_kind(U[i], S[j])
            if kind != 0:
                out[c, 0] = i
                out[c, 1] = j
                out[c, 2] = kind
                c += 1


def segments_cross(p, q) -> int:
    """Intersection kind of two ``(x, xdot)`` chords (see :func:`_cross_kind`)."""
    return int(_cross_kind(np.asarray(p, dtype=float), np.asarray(q, dtype=float)))


def _as_array(segs):
    if not segs:
        return np.zeros((0, 4))
    return np.array([[*g.point_a, *g.point_b] for g in segs], dtype=float)


def chord_intersection(p, q):
    """Intersection point of the lines through two chords (midpoint if parallel)."""
    a, b = np.asarray(p[:2]), np.asarray(p[2:])
    c, d = np.asarray(q[:2]), np.asarray(q[2:])
    r, s = b - a, d - c
    den = r[0] * s[1] - r[1] * s[0]
    if den == 0.0:
        return tuple(0.5 * (a + b))
    t = ((c - a)[0] * s[1] - (c - a)[1] * s[0]) / den
    return tuple(a + t * r)


def find_candidate_intersections(u_segs: list[Segment], s_segs: list[Segment],
                                 u_C: float | None = None, s_C: float | None = None) -> list[Candidate]:
    """All crossing (unstable, stable) segment pairs, with a bounding-box fast reject."""
    if u_C is not None and s_C is not None and abs(u_C - s_C) > JACOBI_MATCH:
        raise JacobiMismatchError(f"curves have Jacobi constants {u_C!r} and {s_C!r}")
    U, S = _as_array(u_segs), _as_array(s_segs)
    if len(U) == 0 or len(S) == 0:
        return []
    counts = _count_pairs(U, S)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    pairs = np.zeros((int(counts.sum()), 3), dtype=np.int64)
    _fill_pairs(U, S, offsets, pairs)
    return [Candidate(u_segs[i], s_segs[j], chord_intersection(U[i], S[j]), bool(kind == 2))
            for i, j, kind in pairs]


def curve_candidates(u_curves, s_curves, j_abs: float = J_ABS, j_rel: float = J_REL) -> list[Candidate]:
    """Candidates over every pair of branches."""
    out = []
    for cu in u_curves:
        for cs in s_curves:
            out += find_candidate_intersections(build_segments(cu, j_abs, j_rel), build_segments(cs, j_abs, j_rel),
                                                cu.C, cs.C)
    return out


# -- refinement ------------------------------------------------------------------

class _Param:
    """Bisection in the fundamental-domain preimage ``sigma / Lambda**k``."""

    def __init__(self, w: ManifoldExpansion, cfg):
        self.w = w
        self.cfg = cfg
        self.big = w.lam if w.kind == "unstable" else 1.0 / w.lam
        self.D = w.normalized_domain

    def level(self, sigma):
        if abs(sigma) <= self.D:
            return 0
        return math.ceil(math.log(abs(sigma) / self.D) / math.log(self.big) - 1e-12)

    def mid(self, a, b):
        k = max(self.level(a), self.level(b))
        scale = self.big ** k
        return scale * (0.5 * (a / scale + b / scale))

    def point(self, sigma):
        state, _ = section_point(self.w, sigma, self.cfg)
        return state


def _chord(pa, pb):
    return np.array([pa[0], pa[2], pb[0], pb[2]])


def refine(candidate: Candidate, wu: ManifoldExpansion, ws: ManifoldExpansion,
           u_curve: SectionCurve | None = None, s_curve: SectionCurve | None = None,
           tol_s: float = TOL_S, tol_xy: float = TOL_XY, cfg: IntegratorConfig = MANIFOLD_CONFIG,
           j_abs: float = J_ABS, j_rel: float = J_REL) -> Outcome:
    """Bisect both parameter intervals of a candidate until the curves meet.

    Each round evaluates both midpoints, splits each chord in two and keeps
    the crossing sub-pair.  When no sub-pair crosses, the neighbouring
    stored segments are checked once (a crossing can move to an adjacent
    chord as the curves sharpen); if none crosses the candidate is spurious.
    Ends when the midpoints are within ``tol_xy`` in ``(x, xdot, ydot)`` or
    both intervals are below ``tol_s`` relative.
    """
    pu, ps = _Param(wu, cfg), _Param(ws, cfg)
    ua, ub = candidate.u.s_a, candidate.u.s_b
    sa, sb = candidate.s.s_a, candidate.s.s_b
    try:
        Pua, Pub, Psa, Psb = pu.point(ua), pu.point(ub), ps.point(sa), ps.point(sb)
        resets = 0
        for rnd in range(1, MAX_ROUNDS + 1):
            um, sm = pu.mid(ua, ub), ps.mid(sa, sb)
            Pum, Psm = pu.point(um), ps.point(sm)
            gap = float(np.linalg.norm((Pum - Psm)[[0, 2, 3]]))
            small = (abs(ub - ua) <= tol_s * max(abs(um), 1.0)) and (abs(sb - sa) <= tol_s * max(abs(sm), 1.0))
            if gap < tol_xy or small:
                if gap >= 1e3 * tol_xy:
                    return Outcome("unresolved", candidate, reason=f"intervals collapsed with gap {gap:.2e}")
                state = 0.5 * (Pum + Psm)
                state[1] = 0.0
                return Outcome("connection", candidate,
                               HeteroclinicConnection(state=state, s_u=um, s_s=sm, residual=gap, rounds=rnd))
            u_parts = [(ua, um, Pua, Pum), (um, ub, Pum, Pub)]
            s_parts = [(sa, sm, Psa, Psm), (sm, sb, Psm, Psb)]
            hit = _first_crossing(u_parts, s_parts)
            if hit is None and resets < MAX_NEIGHBOUR_RESETS:
                hit = _neighbour_crossing(u_parts, s_parts, u_curve, s_curve, candidate, j_abs, j_rel)
                resets += 1
            if hit is None:
                return Outcome("spurious", candidate, reason=f"intersection vanished at round {rnd}")
            (ua, ub, Pua, Pub), (sa, sb, Psa, Psb) = hit
    except (IntegrationError, CollisionError, NoCrossingError) as exc:
        return Outcome("unresolved", candidate, reason=str(exc))
    return Outcome("unresolved", candidate, reason="round limit reached")


def _first_crossing(u_parts, s_parts):
    for up in u_parts:
        for sp in s_parts:
            if _cross_kind(_chord(up[2], up[3]), _chord(sp[2], sp[3])) != 0:
                return up, sp
    return None


def _stored_parts(curve, seg, j_abs, j_rel):
    lo = max(seg.index - NEIGHBOUR_WINDOW, 0)
    hi = min(seg.index + NEIGHBOUR_WINDOW, len(curve) - 2)
    states, linked = curve.states(), link_flags(curve.points, j_abs, j_rel)
    return [(float(curve.s[i]), float(curve.s[i + 1]), states[i], states[i + 1])
            for i in range(lo, hi + 1) if linked[i]]


def _neighbour_crossing(u_parts, s_parts, u_curve, s_curve, cand, j_abs=J_ABS, j_rel=J_REL):
    """Retry with stored segments near the original pair.

    Bisection sharpens a coarse chord into the true curve, which can move the
    crossing several segments along the finer curve.
    """
    u_more = list(u_parts) + ([] if u_curve is None else _stored_parts(u_curve, cand.u, j_abs, j_rel))
    s_more = list(s_parts) + ([] if s_curve is None else _stored_parts(s_curve, cand.s, j_abs, j_rel))
    return _first_crossing(u_parts, s_more) or _first_crossing(u_more, s_parts) or _first_crossing(u_more, s_more)


def deduplicate(connections: list[HeteroclinicConnection], tol: float = DEDUP) -> list[HeteroclinicConnection]:
    """Merge connections closer than ``tol`` in ``(x, xdot)``, keeping the smaller residual; sort by ``s_u``."""
    kept: list[HeteroclinicConnection] = []
    for c in sorted(connections, key=lambda c: c.residual):
        if all(math.hypot(c.state[0] - k.state[0], c.state[2] - k.state[2]) >= tol for k in kept):
            kept.append(c)
    return sorted(kept, key=lambda c: c.s_u)


def find_connections(u_curves, s_curves, wu: ManifoldExpansion, ws: ManifoldExpansion,
                     cfg: IntegratorConfig = MANIFOLD_CONFIG, threads: int | None = None,
                     tol_xy: float = TOL_XY, tol_s: float = TOL_S, j_abs: float = J_ABS, j_rel: float = J_REL):
    """Candidates, their refinement outcomes, and the deduplicated connections."""
    cands, jobs = [], []
    for cu in u_curves:
        for cs in s_curves:
            found = find_candidate_intersections(build_segments(cu, j_abs, j_rel), build_segments(cs, j_abs, j_rel),
                                                 cu.C, cs.C)
            cands += found
            jobs += [(c, cu, cs) for c in found]

    def one(job):
        return refine(job[0], wu, ws, job[1], job[2], tol_s=tol_s, tol_xy=tol_xy, cfg=cfg, j_abs=j_abs, j_rel=j_rel)

    outcomes = _map(one, jobs, threads)
    conns = deduplicate([o.connection for o in outcomes if o.status == "connection"])
    return cands, outcomes, conns


def connection_trajectory(conn: HeteroclinicConnection, u_orbit, s_orbit, horizon: float = 4.0,
                          cfg: IntegratorConfig = MANIFOLD_CONFIG):
    """Times and states from ``-horizon`` unstable periods to ``+horizon`` stable periods.

    The sample at ``t = 0`` is ``conn.state`` itself.
    """
    mu = u_orbit.mu
    tb, yb = trajectory(conn.state, -horizon * u_orbit.period, mu, cfg)
    tf, yf = trajectory(conn.state, horizon * s_orbit.period, mu, cfg)
    return np.concatenate([tb[::-1], tf[1:]]), np.concatenate([yb[::-1], yf[1:]])


def distance_to_orbit(states, orbit, cfg: IntegratorConfig = MANIFOLD_CONFIG):
    """Distance in position-velocity space from each state to the orbit's step samples."""
    _, ys = trajectory(orbit.point, orbit.period, orbit.mu, cfg)
    d = np.linalg.norm(np.asarray(states)[:, None, :] - ys[None, :, :], axis=2)
    return d.min(axis=1)


def connection_energy_error(conn: HeteroclinicConnection, C: float, mu: float) -> float:
    return abs(jacobi_constant(conn.state, mu) - C)


# -- persistence ---------------------------------------------------------------

CONNECTION_HEADER = "x,y,xdot,ydot,s_s,s_u,residual"


def export_connections(conns, path) -> None:
    lines = [CONNECTION_HEADER]
    for c in conns:
        x, y, vx, vy = c.state
        lines.append(",".join(f"{v:.16e}" for v in (x, y, vx, vy, c.s_s, c.s_u, c.residual)))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_connections(path) -> list[HeteroclinicConnection]:
    out = []
    with open(path, encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != CONNECTION_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            if line.strip():
                x, y, vx, vy, ss, su, r = (float(v) for v in line.split(","))
                out.append(HeteroclinicConnection(np.array([x, y, vx, vy]), su, ss, r))
    return out
