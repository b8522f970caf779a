"""Shared fixtures: the Jupiter-Europa 3:4 and 5:6 orbits at C = 3.0024 and
everything built from them, computed once per session."""

from __future__ import annotations

import numpy as np
import pytest

from resonant_manifolds.connections import find_connections
from resonant_manifolds.continuation import match_jacobi
from resonant_manifolds.manifolds import MANIFOLD_CONFIG, fundamental_domain, solve_expansion, unstable_from_stable
from resonant_manifolds.melnikov import ResonanceSpec
from resonant_manifolds.sections import globalize, project_to_section

from acceptance_log import LINES
from reference import C_REF, DEGREE, E_TOL, GRID, MU, REF_ORBITS, S_ITERATIONS, U_ITERATIONS

def pytest_terminal_summary(terminalreporter):
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)


def pytest_collection_modifyitems(items):
    # the slow pipeline fixtures are shared, so run cheap modules first
    items.sort(key=lambda it: it.get_closest_marker("slow") is not None)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def orbits():
    """``{(n, m): (ResonantOrbit, seed eccentricity)}`` continued to ``MU`` at ``C_REF``."""
    return {k: match_jacobi(ResonanceSpec(*k, 0.1), C_REF, MU) for k in REF_ORBITS}


@pytest.fixture(scope="session")
def stable_expansions(orbits):
    """Degree-50 stable expansions with their fundamental domains."""
    out = {}
    for k, (orbit, _) in orbits.items():
        w = solve_expansion(orbit, "stable", DEGREE, cfg=MANIFOLD_CONFIG)
        fundamental_domain(w, E_TOL, MANIFOLD_CONFIG)
        out[k] = w
    return out


@pytest.fixture(scope="session")
def wu34(stable_expansions):
    w = unstable_from_stable(stable_expansions[(3, 4)])
    fundamental_domain(w, E_TOL, MANIFOLD_CONFIG)
    return w


@pytest.fixture(scope="session")
def ws56(stable_expansions):
    return stable_expansions[(5, 6)]


@pytest.fixture(scope="session")
def section_curves(wu34, ws56):
    """Globalized ``(unstable 3:4, stable 5:6)`` curves, both branches each."""
    u = [globalize(project_to_section(wu34, GRID, b), wu34, U_ITERATIONS) for b in (1, -1)]
    s = [globalize(project_to_section(ws56, GRID, b), ws56, S_ITERATIONS) for b in (1, -1)]
    return u, s


@pytest.fixture(scope="session")
def connection_search(section_curves, wu34, ws56):
    """``(candidates, outcomes, connections)`` of the heteroclinic search."""
    u, s = section_curves
    return find_connections(u, s, wu34, ws56)
