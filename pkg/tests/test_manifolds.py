from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from reference import E_TOL
from resonant_manifolds.continuation import ContinuationRun, continue_orbit
from resonant_manifolds.manifolds import (
    MANIFOLD_CONFIG,
    ManifoldError,
    fundamental_domain,
    invariance_residual,
    order_check,
    solve_expansion,
    stable_from_unstable,
    unstable_from_stable,
)
from resonant_manifolds.melnikov import ResonanceSpec


@pytest.fixture(scope="module")
def ws34(stable_expansions):
    return stable_expansions[(3, 4)]


def test_order_residuals_vanish(stable_expansions):
    for w in stable_expansions.values():
        assert [r[0] for r in w.order_residuals] == list(range(2, w.degree + 1))
        assert order_check(w) < 1e-9


def test_expansion_basics(ws34):
    np.testing.assert_array_equal(ws34.coeffs[0], ws34.orbit.point)
    np.testing.assert_allclose(ws34.coeffs[1], ws34.alpha * ws34.orbit.v_s, rtol=0, atol=1e-15)
    assert 0 < ws34.lam < 1 and ws34.lam == ws34.orbit.lambda_s
    assert ws34.degree == 50


def test_degree_one_is_the_linearization(orbits):
    orbit = orbits[(3, 4)][0]
    w = solve_expansion(orbit, "stable", 1, alpha=1.0)
    np.testing.assert_array_equal(w.coeffs, [orbit.point, orbit.v_s])
    r1, r2 = invariance_residual(w, 1e-4), invariance_residual(w, 1e-5)
    # quadratic error: ten times smaller s gives about a hundred times smaller residual
    assert 50 < r1 / r2 < 200


def test_residual_at_origin(stable_expansions, wu34):
    for w in (*stable_expansions.values(), wu34):
        assert invariance_residual(w, 0.0) < 1e-9


def test_residual_small_near_origin(ws34):
    w = ws34.truncate(1)
    r_small = invariance_residual(w, 1e-3 / w.alpha)
    r_big = invariance_residual(w, 1e-2 / w.alpha)
    assert r_small / r_big < 0.05


def test_domain_bounds_the_residual(stable_expansions, wu34):
    for w in (*stable_expansions.values(), wu34):
        D = w.domain_D
        assert D > 0 and w.e_tol == E_TOL
        for s in np.linspace(-D, D, 21):
            assert invariance_residual(w, s) <= E_TOL
        assert max(invariance_residual(w, 2 * D), invariance_residual(w, -2 * D)) > E_TOL


def test_rescaling_doubles_the_raw_domain(ws34):
    w = ws34.truncate(12)
    D = fundamental_domain(w, E_TOL)
    half = w.rescale(0.5)
    np.testing.assert_allclose(half(0.3), w(0.15), rtol=1e-13, atol=1e-13)
    D_half = fundamental_domain(half, E_TOL)
    assert D_half / D == pytest.approx(2.0, rel=1e-2)
    assert half.normalized_domain == pytest.approx(w.normalized_domain, rel=1e-2)


def test_truncation_consistency(ws34):
    low = solve_expansion(ws34.orbit, "stable", 10, alpha=ws34.alpha)
    np.testing.assert_allclose(low.coeffs, ws34.coeffs[:11], rtol=0, atol=1e-9)


def test_reversal_is_an_involution(ws34):
    wu = unstable_from_stable(ws34)
    back = stable_from_unstable(wu)
    np.testing.assert_array_equal(back.coeffs, ws34.coeffs)
    assert back.lam == pytest.approx(ws34.lam, rel=1e-15)
    np.testing.assert_array_equal(wu.coeffs[0][[0, 3]], ws34.coeffs[0][[0, 3]])
    assert wu.coeffs[0][1] == 0.0
    np.testing.assert_allclose(wu.coeffs[0], ws34.coeffs[0], rtol=0, atol=1e-12)
    np.testing.assert_array_equal(wu.coeffs[:, 1], -ws34.coeffs[:, 1])
    np.testing.assert_array_equal(wu.coeffs[:, 2], -ws34.coeffs[:, 2])


def test_reversed_branch_is_invariant_on_the_stable_domain(ws34):
    wu = unstable_from_stable(ws34)
    assert wu.lam == pytest.approx(ws34.orbit.lambda_u, rel=1e-6)
    for s in np.linspace(-ws34.domain_D, ws34.domain_D, 11):
        assert invariance_residual(wu, s) <= E_TOL


@pytest.mark.slow
@pytest.mark.parametrize("key", [(3, 4), (5, 6)], ids=["3:4", "5:6"])
def test_symmetry_consistency(stable_expansions, key):
    """The reversed stable branch equals a directly solved unstable branch."""
    ws = stable_expansions[key]
    direct = solve_expansion(ws.orbit, "unstable", ws.degree, alpha=ws.alpha, cfg=MANIFOLD_CONFIG)
    mirrored = unstable_from_stable(ws)
    # both first coefficients carry the positive-ydot orientation
    assert np.sign(direct.coeffs[1][3]) == np.sign(mirrored.coeffs[1][3])
    np.testing.assert_allclose(direct.coeffs, mirrored.coeffs, rtol=0, atol=1e-6)


def test_errors(ws34, orbits):
    orbit = orbits[(3, 4)][0]
    with pytest.raises(ValueError):
        solve_expansion(orbit, "sideways", 5)
    with pytest.raises(ValueError):
        solve_expansion(orbit, "stable", 0)
    with pytest.raises(ValueError):
        unstable_from_stable(unstable_from_stable(ws34))
    with pytest.raises(ValueError):
        stable_from_unstable(ws34)
    off = dataclasses.replace(ws34, orbit=dataclasses.replace(orbit, point=orbit.point + [0, 1e-3, 0, 0]))
    with pytest.raises(ValueError):
        unstable_from_stable(off)
    elliptic = continue_orbit(ContinuationRun(ResonanceSpec(3, 4, 0.1), np.pi / 3, 2.5266448850435028e-5))
    with pytest.raises(ValueError):
        solve_expansion(elliptic, "stable", 5)
    assert issubclass(ManifoldError, RuntimeError)
