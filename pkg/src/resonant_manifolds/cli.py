"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from . import io as rio
from .connections import (TOL_S, TOL_XY, JacobiMismatchError, connection_trajectory, export_connections,
                          find_connections, read_connections)
from .continuation import ContinuationError, ContinuationRun, continue_orbit, match_jacobi, tisserand_eccentricity
from .dynamics import MU_JUPITER_EUROPA, CollisionError, DomainError, check_mu
from .manifolds import MANIFOLD_CONFIG, ManifoldError, fundamental_domain, solve_expansion, unstable_from_stable
from .melnikov import KeplerError, QuadratureError, ResonanceSpec, find_melnikov_zeros, melnikov_curve
from .pipeline import (ConfigError, StageError, load_config, load_config_text, read_melnikov_csv, run_pipeline,
                       write_candidates_csv, write_melnikov_csv)
from .propagation import IntegrationError, NoCrossingError, trajectory
from .sections import (DEFAULT_GRID, THREADS_ENV, ProjectionError, export_curves, globalize, project_to_section,
                       read_curves, set_threads)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

NUMERICAL = (ContinuationError, ManifoldError, IntegrationError, CollisionError, NoCrossingError, KeplerError,
             QuadratureError, ProjectionError, ArithmeticError)
VALIDATION = (ConfigError, rio.FormatError, JacobiMismatchError, DomainError, ValueError)

log = logging.getLogger("resonant_manifolds")


class StaleInputError(ValueError):
    """An input file's content hash differs from the one recorded downstream."""


def _g_seed(text: str, n: int) -> float:
    t = text.strip().lower().replace(" ", "")
    if t in ("pi/n", f"pi/{n}"):
        return math.pi / n
    return float(t)


def _spec(args, C=None) -> ResonanceSpec:
    e = args.e
    if e is None:
        if C is None:
            raise ValueError("--e is required unless --match-jacobi is given")
        e = tisserand_eccentricity(ResonanceSpec(args.n, args.m, 0.5), C)
    return ResonanceSpec(args.n, args.m, e)


# -- subcommands --------------------------------------------------------------------

def cmd_melnikov(args):
    spec = _spec(args)
    g, M = melnikov_curve(spec, args.grid, args.quad_points)
    zeros = find_melnikov_zeros(spec, args.grid, args.quad_points)
    for z in zeros:
        print(f"zero g={z.g:.12f} slope={z.slope:.6e}{'' if z.simple else ' (not simple)'}")
    if args.csv:
        write_melnikov_csv(args.csv, spec, g, M, zeros)
    if args.plot:
        from .plotting import plot_melnikov
        plot_melnikov(g, M, zeros, spec.label, args.plot)


def cmd_continue(args):
    check_mu(args.mu)
    g0 = _g_seed(args.g0, args.n)
    if args.match_jacobi is not None:
        spec = _spec(args, args.match_jacobi)
        orbit, e = match_jacobi(spec, args.match_jacobi, args.mu, g0, args.steps, e0=args.e)
        extra = {"seed_eccentricity": e, "jacobi_target": args.match_jacobi}
    else:
        spec = _spec(args)
        orbit = continue_orbit(ContinuationRun(spec, g0, args.mu, args.steps))
        extra = {"seed_eccentricity": spec.e}
    if orbit.residual > 1e-9:
        log.warning("periodicity residual %.2e exceeds 1e-9", orbit.residual)
    rio.write_orbit(orbit, args.out, extra)
    print(f"{spec.label} T={orbit.period:.15f} C={orbit.jacobi:.15f} {orbit.stability} "
          f"residual={orbit.residual:.2e}")
    if args.plot:
        from .plotting import plot_orbits
        plot_orbits([trajectory(orbit.point, orbit.period, orbit.mu)], args.plot, orbit.mu, [spec.label])


def cmd_parameterize(args):
    orbit = rio.read_orbit(args.orbit)
    if args.direct or args.kind == "stable":
        w = solve_expansion(orbit, args.kind, args.degree, args.alpha, MANIFOLD_CONFIG)
    else:
        w = unstable_from_stable(solve_expansion(orbit, "stable", args.degree, args.alpha, MANIFOLD_CONFIG))
    fundamental_domain(w, args.etol, MANIFOLD_CONFIG)
    rio.write_expansion(w, args.out, rio.file_hash(args.orbit))
    print(f"{orbit.label.label} {w.kind} degree={w.degree} alpha={w.alpha:.6e} "
          f"D={w.normalized_domain:.6f} (normalized)")


def cmd_globalize(args):
    w = rio.read_expansion(args.expansion)
    curves = [globalize(project_to_section(w, args.grid, b, MANIFOLD_CONFIG), w, args.iterations, MANIFOLD_CONFIG)
              for b in (1, -1)]
    export_curves(curves, args.out, {"expansion_hash": rio.file_hash(args.expansion)})
    dropped = sum(len(c.failures) for c in curves)
    print(f"{sum(len(c) for c in curves)} samples written, {dropped} dropped")
    if args.plot:
        from .plotting import plot_section
        u, s = (curves, []) if w.kind == "unstable" else ([], curves)
        plot_section(u, s, args.plot)


def _check_fresh(curve_path, curves, exp_path):
    recorded = curves[0].meta.get("expansion_hash")
    if recorded and recorded != rio.file_hash(exp_path):
        raise StaleInputError(f"{curve_path} was computed from a different expansion than {exp_path}")


def cmd_connect(args):
    U, S = read_curves(args.unstable), read_curves(args.stable)
    _check_fresh(args.unstable, U, args.uexp)
    _check_fresh(args.stable, S, args.sexp)
    wu, ws = rio.read_expansion(args.uexp), rio.read_expansion(args.sexp)
    if wu.kind != "unstable" or ws.kind != "stable":
        raise ValueError("--uexp must be an unstable expansion and --sexp a stable one")
    cands, outcomes, conns = find_connections(U, S, wu, ws, MANIFOLD_CONFIG, tol_xy=args.tol_xy, tol_s=args.tol_s)
    export_connections(conns, args.out)
    if args.candidates:
        write_candidates_csv(args.candidates, outcomes)
    counts = {k: sum(o.status == k for o in outcomes) for k in ("connection", "spurious", "unresolved")}
    print(f"{len(cands)} candidates: {counts['connection']} refined to connections "
          f"({len(conns)} distinct), {counts['spurious']} spurious, {counts['unresolved']} unresolved")
    if args.plot:
        from .plotting import plot_refinement
        plot_refinement(U, S, conns, args.plot)


def cmd_pipeline(args):
    if args.from_manifest:
        with open(args.from_manifest, encoding="utf-8") as fh:
            cfg = load_config_text(json.load(fh)["config_ini"])
    else:
        cfg = load_config(args.config)
    if args.threads:
        cfg.stages["run"]["threads"] = args.threads
    manifest = run_pipeline(cfg, args.out, force=args.force, plots=not args.no_plots)
    print(f"manifest: {manifest}")


def cmd_plot(args):
    from . import plotting
    first = Path(args.inputs[0])
    head = first.read_text(encoding="utf-8", errors="replace")[:4096]
    if first.suffix == ".json":
        orbits = [rio.read_orbit(p) for p in args.inputs]
        plotting.plot_orbits([trajectory(o.point, o.period, o.mu) for o in orbits], args.out, orbits[0].mu,
                             [o.label.label for o in orbits])
    elif head.startswith("# resonance:"):
        g, M, zeros = read_melnikov_csv(first)
        from .melnikov import MelnikovZero
        plotting.plot_melnikov(g, M, [MelnikovZero(z, 0.0, True) for z in zeros], head.split()[2], args.out)
    elif head.startswith("x,y,xdot,ydot"):
        if len(args.orbits) != 2:
            raise ValueError("a connection plot needs --orbits SOURCE.json TARGET.json")
        conns = read_connections(first)
        src, tgt = (rio.read_orbit(p) for p in args.orbits)
        c = conns[args.index - 1]
        ts, ys = connection_trajectory(c, src, tgt, args.horizon)
        plotting.plot_connection(ts, ys, trajectory(src.point, src.period, src.mu),
                                 trajectory(tgt.point, tgt.period, tgt.mu), args.out, src.mu)
    elif head.startswith("# kind:"):
        U, S = [], []
        for p in args.inputs:
            curves = read_curves(p)
            (U if curves[0].kind == "unstable" else S).extend(curves)
        plotting.plot_section(U, S, args.out)
    else:
        raise ValueError(f"{first}: unrecognised file type")


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resonant-manifolds", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=None,
                   help=f"cap on worker threads (default: ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    # also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("melnikov", parents=[common], help="Melnikov function and its zeros")
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--m", type=int, required=True)
    m.add_argument("--e", type=float, required=True)
    m.add_argument("--grid", type=int, default=720)
    m.add_argument("--quad-points", type=int, default=4096)
    m.add_argument("--csv")
    m.add_argument("--plot")
    m.set_defaults(func=cmd_melnikov)

    c = sub.add_parser("continue", parents=[common], help="continue a resonant orbit from mu=0")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--m", type=int, required=True)
    c.add_argument("--e", type=float, help="seed eccentricity (start of the Jacobi secant if matching)")
    c.add_argument("--g0", default="0", help="0 or pi/n")
    c.add_argument("--mu", type=float, default=MU_JUPITER_EUROPA)
    c.add_argument("--steps", type=int, default=100)
    c.add_argument("--match-jacobi", type=float)
    c.add_argument("--out", required=True)
    c.add_argument("--plot")
    c.set_defaults(func=cmd_continue)

    a = sub.add_parser("parameterize", parents=[common], help="Taylor expansion of a stable or unstable manifold")
    a.add_argument("--orbit", required=True)
    a.add_argument("--kind", choices=("stable", "unstable"), default="stable")
    a.add_argument("--degree", type=int, default=50)
    a.add_argument("--etol", type=float, default=1e-5)
    a.add_argument("--alpha", type=float, help="scale factor (default: automatic)")
    a.add_argument("--direct", action="store_true",
                   help="solve an unstable expansion directly instead of by time reversal")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_parameterize)

    g = sub.add_parser("globalize", parents=[common], help="section curve of an expansion, extended by return maps")
    g.add_argument("--expansion", required=True)
    g.add_argument("--grid", type=int, default=DEFAULT_GRID)
    g.add_argument("--iterations", type=int, default=2)
    g.add_argument("--out", required=True)
    g.add_argument("--plot")
    g.set_defaults(func=cmd_globalize)

    k = sub.add_parser("connect", parents=[common], help="heteroclinic intersections of two section curves")
    k.add_argument("--unstable", required=True)
    k.add_argument("--stable", required=True)
    k.add_argument("--uexp", required=True)
    k.add_argument("--sexp", required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--candidates", help="also write every candidate with its refinement outcome")
    k.add_argument("--tol-xy", type=float, default=TOL_XY)
    k.add_argument("--tol-s", type=float, default=TOL_S)
    k.add_argument("--plot")
    k.set_defaults(func=cmd_connect)

    r = sub.add_parser("pipeline", parents=[common], help="run all stages from a config file")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--from-manifest", help="rerun with the resolved config stored in a manifest")
    r.add_argument("--out", required=True)
    r.add_argument("--force", action="store_true", help="ignore up-to-date stages")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=cmd_pipeline)

    pl = sub.add_parser("plot", parents=[common], help="render a stage output as SVG")
    pl.add_argument("inputs", nargs="+")
    pl.add_argument("--out", required=True)
    pl.add_argument("--orbits", nargs="*", default=[])
    pl.add_argument("--index", type=int, default=1, help="connection row (1-based)")
    pl.add_argument("--horizon", type=float, default=4.0)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        if args.threads is not None:
            set_threads(args.threads)
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc.cause, OSError) else (
            EXIT_VALIDATION if isinstance(exc.cause, VALIDATION) and not isinstance(exc.cause, NUMERICAL)
            else EXIT_NUMERICAL)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (VALIDATION + (KeyError,)) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
