"""Truncated univariate Taylor series ("jets") and their recursions.

A jet of degree ``d`` is the array of coefficients ``c[0..d]`` of a power
series in ``s`` truncated after ``s**d``.  Every recursion below computes
output coefficient ``k`` from input coefficients ``<= k`` only, so working at
a lower truncation degree never changes the coefficients that are kept.

The array kernels (``jet_mul`` and friends) are numba-compiled so the
jet-transport right-hand side in :mod:`resonant_manifolds.propagation` can
call them from inside the integrator loop.  :class:`Jet1` and :class:`Jet4`
wrap them with value semantics for library use.
"""

from __future__ import annotations

import numpy as np
from numba import njit

DIV_ZERO_FLOOR = 1e-300


class JetError(ArithmeticError):
    """Invalid jet operation (degree mismatch, zero divisor, bad power base)."""


# -- array kernels ---------------------------------------------------------


@njit(cache=True, nogil=True)
def jet_mul(a, b, out):
    n = out.size
    for k in range(n):
        acc = 0.0
        for j in range(k + 1):
            acc += a[j] * b[k - j]
        out[k] = acc


@njit(cache=True, nogil=True)
def jet_div(f, g, out):
    # d_k = (f_k - sum_{j<k} d_j g_{k-j}) / g_0
    n = out.size
    g0 = g[0]
    for k in range(n):
        acc = f[k]
        for j in range(k):
            acc -= out[j] * g[k - j]
        out[k] = acc / g0


@njit(cache=True, nogil=True)
def jet_pow(f, alpha, out):
    jet_pow_from(f, alpha, f[0] ** alpha, out)


@njit(cache=True, nogil=True)
def jet_pow_from(f, alpha, h0, out):
    # h = f**alpha  =>  f h' = alpha f' h, giving
    # h_k = 1/(k f_0) sum_{j<k} (alpha (k - j) - j) f_{k-j} h_j
    # linear in h, so h0 = c f_0**alpha yields the jet of c f**alpha
    n = out.size
    f0 = f[0]
    out[0] = h0
    for k in range(1, n):
        acc = 0.0
        for j in range(k):
            acc += (alpha * (k - j) - j) * f[k - j] * out[j]
        out[k] = acc / (k * f0)


@njit(cache=True, nogil=True)
def jet_eval(c, s):
    acc = 0.0
    for k in range(c.size - 1, -1, -1):
        acc = acc * s + c[k]
    return acc


# -- value types -----------------------------------------------------------


class Jet1:
    """Degree-``d`` truncated power series in one variable."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        c = np.array(coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise JetError("a jet needs a non-empty 1-D coefficient array")
        if not np.all(np.isfinite(c)):
            raise JetError("jet coefficients must be finite")
        self.coeffs = c

    @classmethod
    def constant(cls, value: float, degree: int) -> Jet1:
        c = np.zeros(degree + 1)
        c[0] = value
        return cls(c)

    @classmethod
    def variable(cls, degree: int, center: float = 0.0) -> Jet1:
        """The jet of ``center + s``."""
        c = np.zeros(degree + 1)
        c[0] = center
        if degree >= 1:
            c[1] = 1.0
        return cls(c)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __len__(self):
        return self.coeffs.size

    def __repr__(self):
        return f"Jet1({self.coeffs.tolist()!r})"

    def __eq__(self, other):
        if not isinstance(other, Jet1):
            return NotImplemented
        return self.degree == other.degree and bool(np.all(self.coeffs == other.coeffs))

    __hash__ = None

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, Jet1):
            if other.degree != self.degree:
                raise JetError(f"degree mismatch: {self.degree} vs {other.degree}")
            return other.coeffs
        if np.isscalar(other):
            c = np.zeros_like(self.coeffs)
            c[0] = float(other)
            return c
        return NotImplemented

    def __add__(self, other):
        b = self._coerce(other)
        if b is NotImplemented:
            return b
        return Jet1(self.coeffs + b)

    __radd__ = __add__

    def __sub__(self, other):
        b = self._coerce(other)
        if b is NotImplemented:
            return b
        return Jet1(self.coeffs - b)

    def __rsub__(self, other):
        b = self._coerce(other)
        if b is NotImplemented:
            return b
        return Jet1(b - self.coeffs)

    def __neg__(self):
        return Jet1(-self.coeffs)

    def __mul__(self, other):
        if np.isscalar(other):
            return Jet1(self.coeffs * float(other))
        b = self._coerce(other)
        if b is NotImplemented:
            return b
        out = np.empty_like(self.coeffs)
        jet_mul(self.coeffs, b, out)
        return Jet1(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        g = self._coerce(other)
        if g is NotImplemented:
            return g
        if abs(g[0]) < DIV_ZERO_FLOOR:
            raise JetError("division by a jet with zero constant term")
        out = np.empty_like(self.coeffs)
        jet_div(self.coeffs, g, out)
        return Jet1(out)

    def __rtruediv__(self, other):
        f = self._coerce(other)
        if f is NotImplemented:
            return f
        return Jet1(f) / self

    def __pow__(self, alpha):
        alpha = float(alpha)
        if not self.coeffs[0] > 0.0:
            raise JetError("power of a jet needs a positive constant term")
        out = np.empty_like(self.coeffs)
        jet_pow(self.coeffs, alpha, out)
        return Jet1(out)

    def sqrt(self) -> Jet1:
        return self ** 0.5

    def __call__(self, s: float) -> float:
        return float(jet_eval(self.coeffs, float(s)))

    eval = __call__

    def compose_scale(self, lam: float) -> Jet1:
        """Coefficients of ``f(lam * s)``."""
        return Jet1(self.coeffs * float(lam) ** np.arange(self.coeffs.size))

    def truncate(self, degree: int) -> Jet1:
        if degree > self.degree:
            raise JetError("cannot truncate to a higher degree")
        return Jet1(self.coeffs[: degree + 1])

    def extend(self, degree: int) -> Jet1:
        c = np.zeros(degree + 1)
        m = min(degree, self.degree) + 1
        c[:m] = self.coeffs[:m]
        return Jet1(c)


class Jet4:
    """Four jets of a common degree, one per state channel (x, y, vx, vy)."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        c = np.array(coeffs, dtype=float)
        if c.ndim != 2 or c.shape[0] != 4 or c.shape[1] == 0:
            raise JetError("Jet4 coefficients must have shape (4, degree + 1)")
        if not np.all(np.isfinite(c)):
            raise JetError("jet coefficients must be finite")
        self.coeffs = c

    @classmethod
    def from_components(cls, comps) -> Jet4:
        comps = list(comps)
        if len(comps) != 4:
            raise JetError("Jet4 needs exactly four components")
        degrees = {j.degree for j in comps}
        if len(degrees) != 1:
            raise JetError(f"components have different degrees: {sorted(degrees)}")
        return cls(np.stack([j.coeffs for j in comps]))

    @classmethod
    def constant(cls, state, degree: int) -> Jet4:
        c = np.zeros((4, degree + 1))
        c[:, 0] = state
        return cls(c)

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    def __getitem__(self, i) -> Jet1:
        return Jet1(self.coeffs[i])

    def components(self):
        return [Jet1(row) for row in self.coeffs]

    def __call__(self, s: float) -> np.ndarray:
        return np.array([jet_eval(row, float(s)) for row in self.coeffs])

    def compose_scale(self, lam: float) -> Jet4:
        return Jet4(self.coeffs * float(lam) ** np.arange(self.coeffs.shape[1]))

    def truncate(self, degree: int) -> Jet4:
        return Jet4(self.coeffs[:, : degree + 1])

    def __repr__(self):
        return f"Jet4(degree={self.degree})"
