from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import polynomial as P

from resonant_manifolds.jets import Jet1, Jet4, JetError

DEG = 10

coeff = st.floats(-1.0, 1.0, allow_nan=False)
unit = st.floats(0.5, 2.0)


@st.composite
def jets(draw, degree=DEG, c0=None):
    c = draw(st.lists(coeff, min_size=degree + 1, max_size=degree + 1))
    if c0 is not None:
        c[0] = draw(c0)
    return Jet1(c)


def nonzero_c0():
    return st.tuples(unit, st.sampled_from([-1.0, 1.0])).map(lambda t: t[0] * t[1])


def binom(alpha, k):
    """Generalized binomial coefficient by its product formula."""
    return math.prod((alpha - j) / (j + 1) for j in range(k))


def close(a, b, rel, scale=None):
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(np.abs(b), 1.0) if scale is None else scale
    return bool(np.all(np.abs(a - b) <= rel * scale))


# -- fixed examples ---------------------------------------------------------

def test_add_sub_scale_examples():
    one_plus, one_minus = Jet1([1.0, 1.0]), Jet1([1.0, -1.0])
    assert (one_plus + one_minus) == Jet1([2.0, 0.0])
    assert 3 * Jet1([1.0, 2.0]) == Jet1([3.0, 6.0])
    a = Jet1([0.3, -1.2, 4.0])
    assert a - a == Jet1([0.0, 0.0, 0.0])


def test_mul_examples():
    x = Jet1([1.0, 1.0, 0.0])
    assert x * x == Jet1([1.0, 2.0, 1.0])
    assert Jet1([1.0, 1.0]) * Jet1([1.0, -1.0]) == Jet1([1.0, 0.0])


def test_div_geometric_series():
    q = Jet1.constant(1.0, 4) / Jet1([1.0, -1.0, 0.0, 0.0, 0.0])
    assert q == Jet1([1.0] * 5)


def test_pow_binomial_example():
    h = Jet1([1.0, 1.0, 0.0]) ** -1.5
    np.testing.assert_allclose(h.coeffs, [1.0, -1.5, 15.0 / 8.0], rtol=0, atol=1e-15)


def test_eval_and_compose_scale_examples():
    f = Jet1([1.0, 2.0, 1.0])
    assert f(1.0) == 4.0
    assert Jet1([1.0, 1.0, 1.0]).compose_scale(2.0) == Jet1([1.0, 2.0, 4.0])


def test_variable_and_constant():
    assert Jet1.variable(3, 2.0) == Jet1([2.0, 1.0, 0.0, 0.0])
    assert Jet1.constant(5.0, 2) == Jet1([5.0, 0.0, 0.0])
    assert Jet1.variable(0) == Jet1([0.0])


def test_errors():
    with pytest.raises(JetError):
        Jet1([1.0, 2.0]) + Jet1([1.0, 2.0, 3.0])
    with pytest.raises(JetError):
        Jet1([0.0, 1.0]) / Jet1([0.0, 1.0])
    with pytest.raises(JetError):
        Jet1([-1.0, 1.0]) ** 0.5
    with pytest.raises(JetError):
        Jet1([])
    with pytest.raises(JetError):
        Jet1([1.0, np.nan])
    with pytest.raises(JetError):
        Jet1([1.0]).truncate(2)


def test_jet4_shape_and_components():
    j = Jet4.from_components([Jet1([i, 1.0, 0.5]) for i in range(4)])
    assert j.degree == 2
    np.testing.assert_array_equal(j(0.0), [0.0, 1.0, 2.0, 3.0])
    assert j[2] == Jet1([2.0, 1.0, 0.5])
    np.testing.assert_array_equal(j.compose_scale(2.0).coeffs[:, 2], [2.0] * 4)
    assert j.truncate(1).degree == 1
    with pytest.raises(JetError):
        Jet4.from_components([Jet1([1.0]), Jet1([1.0]), Jet1([1.0]), Jet1([1.0, 2.0])])
    with pytest.raises(JetError):
        Jet4(np.zeros((3, 2)))


# -- properties ---------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(jets(), jets())
def test_mul_matches_polynomial_product(a, b):
    full = np.pad(P.polymul(a.coeffs, b.coeffs), (0, 2 * DEG + 1))[: DEG + 1]
    assert close((a * b).coeffs, full, 1e-13)


@settings(max_examples=100, deadline=None)
@given(jets(), jets(), jets())
def test_ring_axioms(a, b, c):
    scale = 10.0
    assert close(((a * b) * c).coeffs, (a * (b * c)).coeffs, 1e-13, scale)
    assert close((a * (b + c)).coeffs, (a * b + a * c).coeffs, 1e-13, scale)
    assert close((a * b).coeffs, (b * a).coeffs, 1e-13, scale)


@settings(max_examples=200, deadline=None)
@given(jets(), jets(c0=nonzero_c0()))
def test_ring_inverse(f, g):
    d = f / g
    back = d * g
    # rounding scale of each convolution coefficient
    scale = np.maximum(np.convolve(np.abs(d.coeffs), np.abs(g.coeffs))[: DEG + 1], np.abs(f.coeffs))
    assert close(back.coeffs, f.coeffs, 1e-12, np.maximum(scale, 1e-300))
    assert close((g / g).coeffs, Jet1.constant(1.0, DEG).coeffs, 1e-12, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-3.0, 3.0), st.integers(0, 12))
def test_pow_binomial_series(alpha, degree):
    h = Jet1.variable(degree, 1.0) ** alpha
    expected = np.array([binom(alpha, k) for k in range(degree + 1)])
    assert close(h.coeffs, expected, 1e-12, np.maximum(np.abs(expected), 1.0))


@settings(max_examples=200, deadline=None)
@given(jets(c0=unit))
def test_sqrt_squares_back(f):
    r = f.sqrt()
    scale = np.maximum(np.convolve(np.abs(r.coeffs), np.abs(r.coeffs))[: DEG + 1], 1e-300)
    assert close((r * r).coeffs, f.coeffs, 1e-12, scale)


@settings(max_examples=100, deadline=None)
@given(jets(c0=unit), st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
def test_pow_exponent_law(f, a, b):
    lhs, rhs = (f ** a) * (f ** b), f ** (a + b)
    scale = np.maximum(np.convolve(np.abs((f ** a).coeffs), np.abs((f ** b).coeffs))[: DEG + 1], 1.0)
    assert close(lhs.coeffs, rhs.coeffs, 1e-12, scale)
    assert close((f ** 1.0).coeffs, f.coeffs, 1e-13, scale)
    assert close((f ** 3).coeffs, (f * f * f).coeffs, 1e-12, 10.0 * scale)


@settings(max_examples=200, deadline=None)
@given(jets(), jets(c0=nonzero_c0()), jets(c0=unit), st.floats(-2.0, 2.0), st.integers(0, DEG))
def test_truncation_invariance(a, g, f, alpha, k):
    """Coefficients up to ``k`` do not depend on the truncation degree."""
    ops = [
        lambda x, y, z: x * y,
        lambda x, y, z: x / y,
        lambda x, y, z: z ** alpha,
        lambda x, y, z: x + y,
    ]
    for op in ops:
        hi = op(a, g, f).coeffs[: k + 1]
        lo = op(a.truncate(k), g.truncate(k), f.truncate(k)).coeffs
        assert close(lo, hi, 1e-13)


@settings(max_examples=100, deadline=None)
@given(jets(), jets(c0=nonzero_c0()), jets(c0=unit), st.integers(0, DEG - 1))
def test_high_coefficients_do_not_leak_down(f, g, p, k):
    """Perturbing coefficients above ``k`` leaves outputs up to ``k`` unchanged."""
    def bump(j):
        c = j.coeffs.copy()
        c[k + 1:] += 0.37
        return Jet1(c)

    for op in (lambda x, y: x / y, lambda x, y: x * y):
        assert np.array_equal(op(f, g).coeffs[: k + 1], op(bump(f), bump(g)).coeffs[: k + 1])
    assert np.array_equal((p ** -1.5).coeffs[: k + 1], (bump(p) ** -1.5).coeffs[: k + 1])


@settings(max_examples=200, deadline=None)
@given(jets(), st.floats(-2.0, 2.0), st.floats(-0.7, 0.7))
def test_compose_scale_identity(f, lam, s):
    lhs = f.compose_scale(lam)(s)
    rhs = f(lam * s)
    scale = max(1.0, float(np.sum(np.abs(f.coeffs) * np.abs(lam * s) ** np.arange(DEG + 1))))
    assert abs(lhs - rhs) <= 1e-13 * scale


@settings(max_examples=100, deadline=None)
@given(jets(), st.floats(-1.0, 1.0))
def test_eval_matches_numpy(f, s):
    assert abs(f(s) - P.polyval(s, f.coeffs)) <= 1e-13 * max(1.0, float(np.sum(np.abs(f.coeffs))))
