from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from reference import GRID
from resonant_manifolds.dynamics import jacobi_constant
from resonant_manifolds.sections import (
    DEAD_ZONE,
    THREADS_ENV,
    conjugacy_error,
    default_threads,
    export_curves,
    globalize,
    link_flags,
    max_energy_error,
    project_to_section,
    read_curves,
    section_point,
    set_threads,
    sigma_grid,
)


def all_curves(section_curves):
    u, s = section_curves
    return [*u, *s]


def expansion_of(curve, wu34, ws56):
    return wu34 if curve.kind == "unstable" else ws56


def growth(w):
    return w.lam if w.kind == "unstable" else 1.0 / w.lam


def test_origin_projects_to_the_fixed_point(wu34, ws56):
    for w in (wu34, ws56):
        p, k = section_point(w, 0.0)
        assert k == 0
        assert np.linalg.norm(p - w.orbit.point) < 1e-9


@pytest.mark.parametrize("kind", ["unstable", "stable"])
def test_conjugacy_within_the_domain(wu34, ws56, kind):
    w = wu34 if kind == "unstable" else ws56
    D = w.normalized_domain
    for sigma in np.linspace(-D, D, 9):
        if sigma == 0.0:
            continue
        assert conjugacy_error(w, sigma) <= 10 * w.e_tol


def test_samples_lie_on_the_section(section_curves, wu34, ws56):
    for c in all_curves(section_curves):
        orbit = expansion_of(c, wu34, ws56).orbit
        assert np.all(c.x < 0)
        assert np.all(np.sign(c.vy) == orbit.section_sign)
        assert np.all(np.diff(np.abs(c.s)) >= 0)
        assert np.all(np.sign(c.s) == c.branch)


def test_energy_is_conserved(section_curves):
    for c in all_curves(section_curves):
        assert max_energy_error(c) < 1e-9


def test_energy_oracle_on_stored_states(section_curves):
    c = section_curves[0][0]
    states = c.states()
    assert np.all(states[:, 1] == 0.0)
    errs = [abs(jacobi_constant(st, c.mu) - c.C) for st in states[::50]]
    assert max(errs) < 1e-9


def test_label_arithmetic(section_curves, wu34, ws56):
    for c in all_curves(section_curves):
        w = expansion_of(c, wu34, ws56)
        big = growth(w)
        labels = set(sigma_grid(w.normalized_domain, GRID, c.branch))
        for k in range(1, c.iterates.max() + 1):
            labels = {x * big for x in labels}
            assert set(c.s[c.iterates == k]) <= labels


def test_one_iteration_fills_the_next_annulus(section_curves, wu34, ws56):
    for c in all_curves(section_curves):
        w = expansion_of(c, wu34, ws56)
        D, big = w.normalized_domain, growth(w)
        first = np.abs(c.s[c.iterates == 1])
        assert first.size > 0
        assert np.all(first > D) and np.all(first <= D * big * (1 + 1e-12))
        zeroth = np.abs(c.s[c.iterates == 0])
        assert zeroth.max() <= D * (1 + 1e-12)
        assert zeroth.min() == pytest.approx(DEAD_ZONE * D)


def test_row_counts(section_curves):
    for c in all_curves(section_curves):
        zero_fail = [f for f in c.failures if abs(f[0]) <= c.meta["domain"] * (1 + 1e-12)]
        assert np.sum(c.iterates == 0) == GRID - len(zero_fail)


def test_export_round_trip(section_curves, tmp_path):
    u = section_curves[0]
    path = tmp_path / "curve.csv"
    export_curves(u, path)
    back = read_curves(path)
    assert [c.branch for c in back] == [-1, 1]
    by_branch = {c.branch: c for c in u}
    for c in back:
        ref = by_branch[c.branch]
        for name in ("s", "x", "vx", "vy", "iterates"):
            np.testing.assert_array_equal(getattr(c, name), getattr(ref, name))
        assert (c.lam, c.C, c.mu, c.kind) == (ref.lam, ref.C, ref.mu, ref.kind)
        assert c.meta["degree"] == ref.meta["degree"] and c.meta["alpha"] == ref.meta["alpha"]
    rows = path.read_text().splitlines()
    assert rows.index("s,iterates,x,xdot,ydot") == len([r for r in rows if r.startswith("#")])
    assert len(rows) - rows.index("s,iterates,x,xdot,ydot") - 1 == sum(len(c) for c in u)


def test_export_errors(tmp_path):
    with pytest.raises(ValueError):
        export_curves([], tmp_path / "x.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("hello\n")
    with pytest.raises(ValueError):
        read_curves(bad)


def test_link_flags_examples():
    line = np.column_stack([np.linspace(0, 0.1, 11), np.zeros(11)])
    assert link_flags(line).all()
    jump = line.copy()
    jump[6:, 0] += 1.0
    flags = link_flags(jump)
    assert not flags[5] and flags[:5].all() and flags[7:].all()
    ratio = np.array([[0.0, 0], [0.001, 0], [0.002, 0], [0.02, 0]])
    np.testing.assert_array_equal(link_flags(ratio), [True, True, False])
    assert link_flags(line[:1]).size == 0


def test_threads_do_not_change_results(wu34):
    small = dataclasses.replace(wu34)
    one = project_to_section(small, 40, 1, threads=1)
    four = project_to_section(small, 40, 1, threads=4)
    for name in ("s", "x", "vx", "vy"):
        np.testing.assert_array_equal(getattr(one, name), getattr(four, name))
    g1 = globalize(one, small, 1, threads=1)
    g4 = globalize(four, small, 1, threads=4)
    np.testing.assert_array_equal(g1.x, g4.x)


def test_thread_settings(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert default_threads() == 3
    monkeypatch.setenv(THREADS_ENV, "many")
    assert default_threads() == 1
    set_threads(2)
    try:
        assert default_threads() == 2
    finally:
        set_threads(None)
    with pytest.raises(ValueError):
        set_threads(0)


def test_errors(wu34):
    with pytest.raises(ValueError):
        project_to_section(wu34, 10, 0)
    nodomain = dataclasses.replace(wu34, domain_D=0.0)
    with pytest.raises(ValueError):
        project_to_section(nodomain, 10)
    with pytest.raises(ValueError):
        section_point(nodomain, 0.1)
    curve = project_to_section(wu34, 5)
    with pytest.raises(ValueError):
        globalize(curve, wu34, -1)
