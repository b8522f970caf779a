from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reference import C_REF, MU
from resonant_manifolds.connections import (
    Candidate,
    HeteroclinicConnection,
    JacobiMismatchError,
    Segment,
    build_segments,
    chord_intersection,
    connection_energy_error,
    connection_trajectory,
    deduplicate,
    export_connections,
    find_candidate_intersections,
    find_connections,
    read_connections,
    refine,
    segments_cross,
)
from resonant_manifolds.dynamics import jacobi_constant
from resonant_manifolds.propagation import flow_state
from resonant_manifolds.sections import SectionCurve, conjugacy_error, section_point

coord = st.integers(-5, 5)
chord = st.tuples(coord, coord, coord, coord)


def curve(points, C=3.0, s=None):
    p = np.asarray(points, dtype=float)
    n = len(p)
    s = np.arange(1, n + 1, dtype=float) if s is None else s
    return SectionCurve(s=s, x=p[:, 0], vx=p[:, 1], vy=np.ones(n), iterates=np.zeros(n), lam=2.0, C=C,
                        mu=0.0, branch=1, kind="unstable")


def segs(chords):
    return [Segment(float(i), float(i) + 1, tuple(c[:2]), tuple(c[2:]), i) for i, c in enumerate(chords)]


def exact_cross(p, q):
    """Intersection test in exact rational arithmetic: 0 none, 1 proper or touching, 2 collinear overlap."""
    p, q = [Fraction(v) for v in p], [Fraction(v) for v in q]

    def orient(a, b, c):
        d = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (d > 0) - (d < 0)

    def within(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    a, b, c, d = p[:2], p[2:], q[:2], q[2:]
    o1, o2, o3, o4 = orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b)
    if o1 == o2 == o3 == o4 == 0:
        return 2 if within(a, b, c) or within(a, b, d) or within(c, d, a) or within(c, d, b) else 0
    if o1 * o2 <= 0 and o3 * o4 <= 0:
        return 1
    return 0


# -- segments and predicates ---------------------------------------------------

def test_linked_curve_gives_n_minus_one_segments():
    pts = np.column_stack([np.linspace(-1.2, -1.1, 30), np.linspace(0, 0.01, 30)])
    out = build_segments(curve(pts))
    assert len(out) == 29
    assert [g.index for g in out] == list(range(29))
    assert out[3].s_a == 4.0 and out[3].s_b == 5.0


def test_jump_segment_is_removed():
    x = [-1.2, -1.199, -1.198, -1.197, -1.187, -1.186]  # the fourth gap is ten times longer
    pts = np.column_stack([x, np.zeros(6)])
    out = build_segments(curve(pts))
    assert [g.index for g in out] == [0, 1, 2, 4]
    with pytest.raises(ValueError):
        build_segments(curve(np.zeros((0, 2))))


def test_cross_examples():
    assert segments_cross([0, 0, 0, 0], [0, 1, 1, 0]) == 0
    assert segments_cross([1, 0, 1, 0], [0, 1, 2, -1]) == 2
    assert segments_cross([0, 0, 2, 2], [0, 2, 2, 0]) == 1
    assert segments_cross([0, 0, 1, 1], [2, 2, 3, 0]) == 0
    assert segments_cross([0, 0, 2, 0], [1, 0, 3, 0]) == 2
    assert segments_cross([0, 0, 2, 0], [2, 0, 2, 1]) == 1
    assert segments_cross([0, 0, 2, 0], [0, 1, 2, 1]) == 0


@settings(max_examples=500, deadline=None)
@given(chord, chord)
def test_cross_matches_exact_arithmetic(p, q):
    assert segments_cross(p, q) == exact_cross(p, q)
    assert segments_cross(p, q) == segments_cross(q, p)


@settings(max_examples=200, deadline=None)
@given(chord, chord)
def test_chord_intersection_lies_on_both_lines(p, q):
    if segments_cross(p, q) != 1:
        return
    x, y = chord_intersection(p, q)
    for a in (p, q):
        d = (a[2] - a[0]) * (y - a[1]) - (a[3] - a[1]) * (x - a[0])
        assert abs(d) < 1e-9


def test_disjoint_boxes_give_no_candidates():
    u = segs([(0, 0, 1, 1), (1, 1, 2, 0)])
    s = segs([(5, 5, 6, 6), (6, 6, 7, 5)])
    assert find_candidate_intersections(u, s) == []
    assert find_candidate_intersections([], s) == []


@settings(max_examples=100, deadline=None)
@given(st.lists(chord, min_size=1, max_size=8), st.lists(chord, min_size=1, max_size=8))
def test_swapping_arguments_gives_the_same_pairs(a, b):
    ua, sb = segs(a), segs(b)
    fwd = {(c.u.index, c.s.index) for c in find_candidate_intersections(ua, sb)}
    back = {(c.s.index, c.u.index) for c in find_candidate_intersections(sb, ua)}
    assert fwd == back
    brute = {(i, j) for i, p in enumerate(a) for j, q in enumerate(b) if exact_cross(p, q)}
    assert fwd == brute


def test_collinear_overlap_is_flagged():
    cands = find_candidate_intersections(segs([(0, 0, 2, 0)]), segs([(1, 0, 3, 0)]))
    assert len(cands) == 1 and cands[0].collinear


def test_jacobi_mismatch():
    u, s = segs([(0, 0, 2, 2)]), segs([(0, 2, 2, 0)])
    with pytest.raises(JacobiMismatchError):
        find_candidate_intersections(u, s, 3.0, 3.0 + 1e-6)
    assert len(find_candidate_intersections(u, s, 3.0, 3.0 + 1e-12)) == 1


def test_deduplicate_keeps_smaller_residual():
    a = HeteroclinicConnection(np.array([-1.0, 0, 0.1, 0.3]), s_u=-5.0, s_s=1.0, residual=1e-10)
    b = HeteroclinicConnection(np.array([-1.0 + 1e-8, 0, 0.1, 0.3]), s_u=-4.0, s_s=1.0, residual=1e-11)
    c = HeteroclinicConnection(np.array([-1.1, 0, 0.1, 0.3]), s_u=-6.0, s_s=2.0, residual=1e-10)
    kept = deduplicate([a, b, c])
    assert kept == [c, b]


def test_connection_file_round_trip(tmp_path):
    conns = [HeteroclinicConnection(np.array([-1.1110838, 1e-15, -0.10187786, 0.14762036]), -3874.28227,
                                    14.24735921, 3e-10)]
    path = tmp_path / "c.csv"
    export_connections(conns, path)
    back = read_connections(path)
    np.testing.assert_array_equal(back[0].state, conns[0].state)
    assert (back[0].s_u, back[0].s_s, back[0].residual) == (conns[0].s_u, conns[0].s_s, conns[0].residual)
    path.write_text("a,b\n")
    with pytest.raises(ValueError):
        read_connections(path)


# -- the 3:4 -> 5:6 search ---------------------------------------------------------

def test_candidates_come_from_crossing_chords(connection_search):
    cands, outcomes, _ = connection_search
    assert len(outcomes) == len(cands) > 0
    for c in cands:
        p = [*c.u.point_a, *c.u.point_b]
        q = [*c.s.point_a, *c.s.point_b]
        assert segments_cross(p, q) != 0
        assert abs(c.u.s_b) > abs(c.u.s_a) and abs(c.s.s_b) > abs(c.s.s_a)
    assert {o.status for o in outcomes} <= {"connection", "spurious", "unresolved"}


def test_connections_lie_on_both_curves(connection_search, wu34, ws56):
    _, _, conns = connection_search
    assert conns
    for c in conns:
        assert c.residual < 1e-9
        assert c.state[1] == 0.0
        assert connection_energy_error(c, C_REF, MU) < 1e-9
        assert abs(jacobi_constant(c.state, MU) - ws56.orbit.jacobi) < 1e-9
        pu, _ = section_point(wu34, c.s_u)
        ps, _ = section_point(ws56, c.s_s)
        assert np.linalg.norm(pu - c.state) < 1e-9
        assert np.linalg.norm(ps - c.state) < 1e-9


def test_refined_points_satisfy_conjugacy(connection_search, wu34, ws56):
    for c in connection_search[2]:
        assert conjugacy_error(wu34, c.s_u) <= 10 * wu34.e_tol
        assert conjugacy_error(ws56, c.s_s) <= 10 * ws56.e_tol


def test_connections_sorted_and_distinct(connection_search):
    conns = connection_search[2]
    assert [c.s_u for c in conns] == sorted(c.s_u for c in conns)
    for i, a in enumerate(conns):
        for b in conns[i + 1:]:
            assert np.hypot(a.state[0] - b.state[0], a.state[2] - b.state[2]) >= 1e-6


def test_refine_reports_spurious_for_separating_chords(wu34, ws56):
    """Chords that cross only as straight lines separate once midpoints are evaluated."""
    u = Segment(0.1, 0.2, (-1.0, 0.0), (-2.0, 1.0), 0)
    s = Segment(0.1, 0.2, (-1.0, 1.0), (-2.0, 0.0), 0)
    out = refine(Candidate(u, s, (-1.5, 0.5)), wu34, ws56)
    assert out.status == "spurious" and out.connection is None


def test_legs_contract_at_the_eigenvalue_rate(connection_search, wu34, ws56):
    """One period inside the fundamental domain, period-map steps shrink by the contracting eigenvalue."""
    for c in connection_search[2]:
        for w, s, sign in ((wu34, c.s_u, -1), (ws56, c.s_s, 1)):
            big = w.lam if w.kind == "unstable" else 1.0 / w.lam
            x0, k = section_point(w, s)
            xs = [flow_state(x0, sign * j * w.orbit.period, MU) for j in range(k + 3)]
            steps = [np.linalg.norm(b - a) for a, b in zip(xs, xs[1:])]
            # after k periods the point is inside the domain; the next step shows the linear rate,
            # with slack for quadratic terms near the domain edge
            assert steps[k + 1] < steps[k] * 4.0 / big


def test_connection_trajectory(connection_search, wu34, ws56):
    c = connection_search[2][0]
    ts, ys = connection_trajectory(c, wu34.orbit, ws56.orbit, horizon=2.0)
    i = int(np.nonzero(ts == 0.0)[0][0])
    np.testing.assert_array_equal(ys[i], c.state)
    assert np.all(np.diff(ts) > 0)
    assert ts[0] == pytest.approx(-2 * wu34.orbit.period) and ts[-1] == pytest.approx(2 * ws56.orbit.period)
    C = np.array([jacobi_constant(y, MU) for y in ys])
    assert np.max(np.abs(C - jacobi_constant(c.state, MU))) < 1e-9


@pytest.mark.slow
def test_search_is_deterministic_across_threads(section_curves, wu34, ws56, connection_search):
    u, s = section_curves
    _, outcomes, conns = find_connections(u, s, wu34, ws56, threads=4)
    assert [o.status for o in outcomes] == [o.status for o in connection_search[1]]
    assert len(conns) == len(connection_search[2])
    for a, b in zip(conns, connection_search[2]):
        np.testing.assert_array_equal(a.state, b.state)
        assert (a.s_u, a.s_s, a.residual) == (b.s_u, b.s_s, b.residual)
