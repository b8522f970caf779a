"""Flat-file formats: JSON records for orbits and expansions, content hashes.

Every float is written with 17 significant digits (``%.16e``), so doubles
round-trip exactly.  Complex eigenvalues are stored as ``{"re": .., "im": ..}``.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from .continuation import ResonantOrbit
from .manifolds import ManifoldExpansion
from .melnikov import ResonanceSpec

ORBIT_FORMAT = "resonant-orbit/1"
EXPANSION_FORMAT = "manifold-expansion/1"


class FormatError(ValueError):
    """A file does not match the documented layout."""


def fmt(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return f"{x:.16e}"


def fmt_csv(x: float) -> str:
    return fmt(x).strip('"')


def dumps(obj, indent: int = 0) -> str:
    """JSON text with full-precision floats; keys keep insertion order."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if all(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    if isinstance(obj, complex):
        return dumps({"re": obj.real, "im": obj.imag}, indent)
    if obj is None:
        return "null"
    return json.dumps(obj)


def _num(v):
    if isinstance(v, dict):
        return complex(_num(v["re"]), _num(v["im"]))
    if isinstance(v, str):
        return float(v)
    return float(v)


def _eig(v):
    v = complex(v)
    return v.real if v.imag == 0.0 else v


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_hash(path) -> str:
    with open(path, "rb") as fh:
        return sha256_bytes(fh.read())


def write_text(path, text: str) -> str:
    """Write ``text`` and return its content hash."""
    data = text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(data)
    return sha256_bytes(data)


def _load(path, fmt_name):
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not JSON ({exc})") from exc
    if data.get("format") != fmt_name:
        raise FormatError(f"{path}: expected format {fmt_name!r}, found {data.get('format')!r}")
    return data


# -- orbits --------------------------------------------------------------------

def orbit_to_dict(orbit: ResonantOrbit, extra: dict | None = None) -> dict:
    d = {
        "format": ORBIT_FORMAT,
        "resonance": {"n": orbit.label.n, "m": orbit.label.m, "e": orbit.label.e},
        "g_seed": orbit.g_seed,
        "mu": orbit.mu,
        "point": list(orbit.point),
        "period": orbit.period,
        "jacobi": orbit.jacobi,
        "stability": orbit.stability,
        "lambda_u": _eig(orbit.lambda_u),
        "lambda_s": _eig(orbit.lambda_s),
        "v_u": [_eig(v) for v in np.asarray(orbit.v_u)],
        "v_s": [_eig(v) for v in np.asarray(orbit.v_s)],
        "residual": orbit.residual,
    }
    if extra:
        d.update(extra)
    return d


def orbit_from_dict(d: dict) -> ResonantOrbit:
    try:
        r = d["resonance"]
        vec = lambda key: np.array([_num(v) for v in d[key]])  # noqa: E731
        v_u, v_s = vec("v_u"), vec("v_s")
        return ResonantOrbit(
            point=np.array([_num(v) for v in d["point"]]), period=_num(d["period"]), mu=_num(d["mu"]),
            lambda_u=_eig(_num(d["lambda_u"])), lambda_s=_eig(_num(d["lambda_s"])),
            v_u=v_u.real if not np.iscomplexobj(v_u) or not v_u.imag.any() else v_u,
            v_s=v_s.real if not np.iscomplexobj(v_s) or not v_s.imag.any() else v_s,
            label=ResonanceSpec(int(r["n"]), int(r["m"]), _num(r["e"])), g_seed=_num(d["g_seed"]),
            residual=_num(d["residual"]), stability=d["stability"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed orbit record: {exc}") from exc


def write_orbit(orbit: ResonantOrbit, path, extra: dict | None = None) -> str:
    return write_text(path, dumps(orbit_to_dict(orbit, extra)) + "\n")


def read_orbit(path) -> ResonantOrbit:
    return orbit_from_dict(_load(path, ORBIT_FORMAT))


# -- expansions ------------------------------------------------------------------

def expansion_to_dict(w: ManifoldExpansion, orbit_hash: str = "") -> dict:
    return {
        "format": EXPANSION_FORMAT,
        "kind": w.kind,
        "lambda": w.lam,
        "alpha": w.alpha,
        "degree": w.degree,
        "domain_D": w.domain_D,
        "normalized_domain": w.normalized_domain,
        "e_tol": w.e_tol,
        "orbit_hash": orbit_hash,
        "orbit": orbit_to_dict(w.orbit),
        "order_residuals": [[k, low, const] for k, low, const in w.order_residuals],
        "coeffs": [list(row) for row in w.coeffs],
    }


def expansion_from_dict(d: dict) -> ManifoldExpansion:
    try:
        return ManifoldExpansion(
            orbit=orbit_from_dict(d["orbit"]), kind=d["kind"], lam=_num(d["lambda"]),
            coeffs=np.array([[_num(v) for v in row] for row in d["coeffs"]]), alpha=_num(d["alpha"]),
            domain_D=_num(d["domain_D"]), e_tol=_num(d["e_tol"]),
            order_residuals=[(int(k), _num(a), _num(b)) for k, a, b in d["order_residuals"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed expansion record: {exc}") from exc


def write_expansion(w: ManifoldExpansion, path, orbit_hash: str = "") -> str:
    return write_text(path, dumps(expansion_to_dict(w, orbit_hash)) + "\n")


def read_expansion(path) -> ManifoldExpansion:
    return expansion_from_dict(_load(path, EXPANSION_FORMAT))
