"""Samplers shared by the unit and acceptance suites."""

from __future__ import annotations

import math

import numpy as np

from reference import MU
from resonant_manifolds.dynamics import CollisionError
from resonant_manifolds.melnikov import melnikov_M, resolving_points, secondary_distance
from resonant_manifolds.propagation import IntegrationError, IntegratorConfig, trajectory

# the 3:4 e=0.5 case plus five others
SUITE = [(3, 4, 0.5), (5, 6, 0.4), (2, 3, 0.2), (3, 5, 0.4), (4, 7, 0.2), (7, 8, 0.6)]


def resolved_M(spec):
    """``M`` at a quadrature resolving the closest approach over a sample of angles."""
    P = 2 * math.pi / spec.n
    gs = np.linspace(0, P, 25)[1:-1]
    d = np.array([secondary_distance(spec, g) for g in gs])
    gs = gs[d > 1e-3]
    N = resolving_points(spec, d[d > 1e-3].min())
    return gs, lambda g: melnikov_M(spec, g, N, check=False, method="analytic")


def random_level_state(rng, C=3.0024, mu=MU):
    """A state at Jacobi constant ``C`` in the inner region, clear of the secondary."""
    while True:
        r = rng.uniform(0.5, 1.6)
        th = rng.uniform(0, 2 * np.pi)
        x, y = r * np.cos(th) - mu, r * np.sin(th)
        if math.hypot(x - 1 + mu, y) < 0.2:
            continue
        r2 = math.hypot(x - 1 + mu, y)
        v2 = x * x + y * y + 2 * ((1 - mu) / r + mu / r2) - C
        if v2 <= 0.01:
            continue
        a = rng.uniform(0, 2 * np.pi)
        v = math.sqrt(v2)
        return np.array([x, y, v * np.cos(a), v * np.sin(a)])


def bounded_sample(rng, n, t, cfg=IntegratorConfig()):
    """``n`` trajectories of duration ``t`` that keep clear of both primaries."""
    out = []
    while len(out) < n:
        s0 = random_level_state(rng)
        try:
            ts, ys = trajectory(s0, t, MU, cfg)
        except (CollisionError, IntegrationError):
            continue
        r1 = np.hypot(ys[:, 0] + MU, ys[:, 1])
        r2 = np.hypot(ys[:, 0] - 1 + MU, ys[:, 1])
        if r1.min() > 0.1 and r2.min() > 0.01 and r1.max() < 3.0:
            out.append((ts, ys))
    return out
