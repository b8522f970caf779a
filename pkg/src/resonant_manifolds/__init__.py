"""Resonant periodic orbits of the planar CRTBP, their invariant manifolds
as high-order Taylor expansions, and heteroclinic connections between them."""

__version__ = "0.1.0"
