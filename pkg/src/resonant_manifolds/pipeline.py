"""Configuration and the five-stage run: melnikov, continue, parameterize, globalize, connect.

Stage outputs are flat files in one directory.  ``manifest.json`` records
the resolved configuration, tolerances, software versions, wall times and
the content hash of every artifact.  A stage whose inputs and settings hash
to the key stored in the manifest, and whose outputs are unchanged on disk,
is skipped.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import io as rio
from .connections import (TOL_S, TOL_XY, connection_trajectory, export_connections, find_connections)
from .continuation import DEFAULT_CONFIG, match_jacobi, tisserand_eccentricity
from .manifolds import MANIFOLD_CONFIG, fundamental_domain, solve_expansion, unstable_from_stable
from .melnikov import ResonanceSpec, find_melnikov_zeros, melnikov_curve
from .propagation import IntegratorConfig, trajectory
from .sections import DEFAULT_GRID, J_ABS, J_REL, export_curves, globalize, project_to_section, read_curves

log = logging.getLogger(__name__)

DEFAULTS = {
    "melnikov": {"grid": 720, "quad_points": 4096},
    "continuation": {"steps": 100, "abs_tol": DEFAULT_CONFIG.abs_tol, "rel_tol": DEFAULT_CONFIG.rel_tol},
    "manifolds": {"degree": 50, "e_tol": 1e-5, "abs_tol": MANIFOLD_CONFIG.abs_tol, "rel_tol": MANIFOLD_CONFIG.rel_tol},
    "sections": {"grid": DEFAULT_GRID, "unstable_iterations": 2, "stable_iterations": 1},
    "connection": {"tol_xy": TOL_XY, "tol_s": TOL_S, "j_abs": J_ABS, "j_rel": J_REL},
    "run": {"threads": 1, "horizon": 4.0},
}
INT_KEYS = {"n", "m", "grid", "quad_points", "steps", "degree", "unstable_iterations", "stable_iterations",
            "threads"}
STR_KEYS = {"source", "target", "g_seed"}


class ConfigError(ValueError):
    """Configuration does not match the schema or is inconsistent."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def schema() -> dict:
    text = resources.files("resonant_manifolds").joinpath("data/config.schema.json").read_text()
    return json.loads(text)


def _coerce(key, value):
    if key in STR_KEYS:
        return value
    try:
        return int(value) if key in INT_KEYS else float(value)
    except ValueError:
        return value  # left for the schema to reject


def parse_config_text(text: str) -> dict:
    """INI text to the nested dict the schema describes (no defaults applied)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    raw: dict = {"resonances": {}}
    for section in cp.sections():
        values = {k: _coerce(k, v) for k, v in cp[section].items()}
        if section.startswith("resonance."):
            raw["resonances"][section.split(".", 1)[1]] = values
        else:
            raw[section] = values
    return raw


@dataclass
class PipelineConfig:
    mu: float
    jacobi_target: float
    resonances: dict  # name -> {"n", "m", "e"?, "g_seed"}
    source: str
    target: str
    stages: dict = field(default_factory=dict)  # section -> resolved settings
    text: str = ""

    def setting(self, section: str, key: str):
        return self.stages[section][key]

    def spec(self, name: str) -> ResonanceSpec:
        r = self.resonances[name]
        e = r.get("e")
        if e is None:
            e = tisserand_eccentricity(ResonanceSpec(r["n"], r["m"], 0.5), self.jacobi_target)
        return ResonanceSpec(r["n"], r["m"], e)

    def g_seed(self, name: str) -> float:
        return 0.0 if self.resonances[name].get("g_seed", "0") == "0" else math.pi / self.resonances[name]["n"]

    def integrator(self, section: str) -> IntegratorConfig:
        return IntegratorConfig(abs_tol=self.setting(section, "abs_tol"), rel_tol=self.setting(section, "rel_tol"))


def load_config_text(text: str) -> PipelineConfig:
    raw = parse_config_text(text)
    if not raw["resonances"]:
        raise ConfigError("at least one [resonance.NAME] section is required")
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"config invalid at {path or '<root>'}: {exc.message}") from exc
    conn = raw["connection"]
    for role in ("source", "target"):
        if conn[role] not in raw["resonances"]:
            raise ConfigError(f"connection {role} {conn[role]!r} is not a defined resonance")
    for name, r in raw["resonances"].items():
        try:
            ResonanceSpec(r["n"], r["m"], r.get("e", 0.5))
        except ValueError as exc:
            raise ConfigError(f"resonance {name!r}: {exc}") from exc
    stages = {sec: {**vals, **{k: v for k, v in raw.get(sec, {}).items() if k not in ("source", "target")}}
              for sec, vals in DEFAULTS.items()}
    return PipelineConfig(mu=raw["system"]["mu"], jacobi_target=raw["system"]["jacobi_target"],
                          resonances=raw["resonances"], source=conn["source"], target=conn["target"],
                          stages=stages, text=text)


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return load_config_text(fh.read())


def resolved_text(cfg: PipelineConfig) -> str:
    """INI text with every default written out (what the manifest stores)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp["system"] = {"mu": rio.fmt_csv(cfg.mu), "jacobi_target": rio.fmt_csv(cfg.jacobi_target)}
    for name, r in cfg.resonances.items():
        cp[f"resonance.{name}"] = {k: (rio.fmt_csv(v) if isinstance(v, float) else str(v)) for k, v in r.items()}
    for sec, vals in cfg.stages.items():
        cp[sec] = {k: (rio.fmt_csv(v) if isinstance(v, float) else str(v)) for k, v in vals.items()}
    cp["connection"]["source"] = cfg.source
    cp["connection"]["target"] = cfg.target
    lines = []
    for sec in cp.sections():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {v}" for k, v in cp[sec].items()]
        lines.append("")
    return "\n".join(lines)


# -- the run -----------------------------------------------------------------------

def _key(payload) -> str:
    return hashlib.sha256(rio.dumps(payload).encode()).hexdigest()


def _label(spec: ResonanceSpec) -> str:
    return f"{spec.n}-{spec.m}"


class _Run:
    def __init__(self, cfg: PipelineConfig, out: Path, force: bool):
        self.cfg, self.out, self.force = cfg, out, force
        self.old = {}
        mpath = out / "manifest.json"
        if mpath.exists() and not force:
            try:
                self.old = json.loads(mpath.read_text()).get("stages", {})
            except (json.JSONDecodeError, OSError):
                self.old = {}
        self.stages: dict = {}

    def fresh(self, name, key):
        rec = self.old.get(name)
        if not rec or rec.get("key") != key:
            return False
        return all((self.out / f).exists() and rio.file_hash(self.out / f) == h for f, h in rec["artifacts"].items())

    def stage(self, name, payload, body):
        key = _key(payload)
        if self.fresh(name, key):
            log.info("stage %s up to date", name)
            self.stages[name] = dict(self.old[name], skipped=True)
            return self.stages[name]["artifacts"]
        t0 = time.perf_counter()
        try:
            files = body()
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            raise StageError(name, exc) from exc
        artifacts = {f: rio.file_hash(self.out / f) for f in files}
        self.stages[name] = {"key": key, "artifacts": artifacts, "wall_time": time.perf_counter() - t0,
                             "skipped": False}
        log.info("stage %s done in %.1f s", name, self.stages[name]["wall_time"])
        return artifacts


def run_pipeline(cfg: PipelineConfig, out_dir, force: bool = False, plots: bool = True) -> Path:
    """Run every stage into ``out_dir``; returns the manifest path."""
    from . import plotting
    from .sections import set_threads

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    set_threads(cfg.setting("run", "threads"))
    run = _Run(cfg, out, force)
    C, mu = cfg.jacobi_target, cfg.mu
    names = list(cfg.resonances)
    specs = {n: cfg.spec(n) for n in names}

    # melnikov
    def melnikov_body():
        files = []
        mset = cfg.stages["melnikov"]
        for name in names:
            spec = specs[name]
            g, M = melnikov_curve(spec, mset["grid"], mset["quad_points"])
            zeros = find_melnikov_zeros(spec, mset["grid"], mset["quad_points"])
            f = f"melnikov_{_label(spec)}.csv"
            write_melnikov_csv(out / f, spec, g, M, zeros)
            files.append(f)
            if plots:
                plotting.plot_melnikov(g, M, zeros, spec.label, out / f"melnikov_{_label(spec)}.svg")
        return files

    run.stage("melnikov", {"specs": {n: [s.n, s.m, s.e] for n, s in specs.items()},
                           "settings": cfg.stages["melnikov"]}, melnikov_body)

    # continue
    orbit_files = {n: f"orbit_{_label(specs[n])}.json" for n in names}
    csettings = cfg.stages["continuation"]

    def continue_body():
        icfg = cfg.integrator("continuation")
        for name in names:
            orbit, e = match_jacobi(specs[name], C, mu, cfg.g_seed(name), csettings["steps"], icfg)
            rio.write_orbit(orbit, out / orbit_files[name], {"seed_eccentricity": e, "jacobi_target": C})
        if plots:
            trajs = [trajectory(o.point, o.period, o.mu, icfg) for o in (rio.read_orbit(out / orbit_files[n])
                                                                          for n in names)]
            plotting.plot_orbits(trajs, out / "orbits.svg", mu, labels=[specs[n].label for n in names])
        return list(orbit_files.values())

    orbit_hashes = run.stage("continue", {"mu": mu, "C": C, "specs": {n: [s.n, s.m, s.e, cfg.g_seed(n)]
                                                                      for n, s in specs.items()},
                                          "settings": csettings}, continue_body)

    # parameterize: stable expansions, the source's unstable one by time reversal
    src, tgt = cfg.source, cfg.target
    wu_file, ws_file = f"wu_{_label(specs[src])}.json", f"ws_{_label(specs[tgt])}.json"
    msettings = cfg.stages["manifolds"]

    def parameterize_body():
        mcfg = cfg.integrator("manifolds")
        alpha = msettings.get("alpha")
        out_files = []
        for name, kind, fname in ((src, "unstable", wu_file), (tgt, "stable", ws_file)):
            orbit = rio.read_orbit(out / orbit_files[name])
            w = solve_expansion(orbit, "stable", msettings["degree"], alpha, mcfg)
            if kind == "unstable":
                w = unstable_from_stable(w)
            fundamental_domain(w, msettings["e_tol"], mcfg)
            rio.write_expansion(w, out / fname, orbit_hashes[orbit_files[name]])
            out_files.append(fname)
        return out_files

    exp_hashes = run.stage("parameterize", {"orbits": orbit_hashes, "settings": msettings}, parameterize_body)

    # globalize
    ssettings = cfg.stages["sections"]
    u_csv, s_csv = "u_curve.csv", "s_curve.csv"

    def globalize_body():
        mcfg = cfg.integrator("manifolds")
        for fname, csv, iters in ((wu_file, u_csv, ssettings["unstable_iterations"]),
                                  (ws_file, s_csv, ssettings["stable_iterations"])):
            w = rio.read_expansion(out / fname)
            curves = [globalize(project_to_section(w, ssettings["grid"], b, mcfg), w, iters, mcfg) for b in (1, -1)]
            export_curves(curves, out / csv, {"expansion_hash": exp_hashes[fname]})
        if plots:
            plotting.plot_section(read_curves(out / u_csv), read_curves(out / s_csv), out / "section.svg",
                                  labels=(f"{specs[src].label} unstable", f"{specs[tgt].label} stable"))
        return [u_csv, s_csv]

    curve_hashes = run.stage("globalize", {"expansions": exp_hashes, "settings": ssettings}, globalize_body)

    # connect
    ksettings = cfg.stages["connection"]

    def connect_body():
        mcfg = cfg.integrator("manifolds")
        wu, ws = rio.read_expansion(out / wu_file), rio.read_expansion(out / ws_file)
        U, S = read_curves(out / u_csv), read_curves(out / s_csv)
        cands, outcomes, conns = find_connections(U, S, wu, ws, mcfg, tol_xy=ksettings["tol_xy"],
                                                  tol_s=ksettings["tol_s"], j_abs=ksettings["j_abs"],
                                                  j_rel=ksettings["j_rel"])
        export_connections(conns, out / "connections.csv")
        write_candidates_csv(out / "candidates.csv", outcomes)
        files = ["connections.csv", "candidates.csv"]
        if plots:
            plotting.plot_refinement(U, S, conns, out / "refine.svg")
            horizon = cfg.setting("run", "horizon")
            u_traj = trajectory(wu.orbit.point, wu.orbit.period, mu, mcfg)
            s_traj = trajectory(ws.orbit.point, ws.orbit.period, mu, mcfg)
            for i, c in enumerate(conns, 1):
                ts, ys = connection_trajectory(c, wu.orbit, ws.orbit, horizon, mcfg)
                plotting.plot_connection(ts, ys, u_traj, s_traj, out / f"connection_{i}.svg", mu)
        return files

    run.stage("connect", {"curves": curve_hashes, "expansions": exp_hashes, "settings": ksettings}, connect_body)

    manifest = {
        "format": "pipeline-manifest/1",
        "version": __version__,
        "software": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": _version("scipy"), "numba": _version("numba"), "matplotlib": _version("matplotlib")},
        "config_ini": resolved_text(cfg),
        "tolerances": {"continuation": {"abs_tol": csettings["abs_tol"], "rel_tol": csettings["rel_tol"]},
                       "manifolds": {"abs_tol": msettings["abs_tol"], "rel_tol": msettings["rel_tol"],
                                     "e_tol": msettings["e_tol"]},
                       "connection": {"tol_xy": ksettings["tol_xy"], "tol_s": ksettings["tol_s"]}},
        "stages": run.stages,
    }
    mpath = out / "manifest.json"
    rio.write_text(mpath, rio.dumps(manifest) + "\n")
    return mpath


def _version(mod):
    from importlib.metadata import PackageNotFoundError, version
    try:
        return version(mod)
    except PackageNotFoundError:
        return "unknown"


def write_melnikov_csv(path, spec, g, M, zeros) -> None:
    lines = [f"# resonance: {spec.label}", f"# e: {rio.fmt_csv(spec.e)}"]
    lines += [f"# zero: {rio.fmt_csv(z.g)} slope {rio.fmt_csv(z.slope)}" for z in zeros]
    lines.append("g,M")
    lines += [f"{rio.fmt_csv(a)},{rio.fmt_csv(b)}" for a, b in zip(g, M)]
    rio.write_text(path, "\n".join(lines) + "\n")


def read_melnikov_csv(path):
    g, M, zeros = [], [], []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            if line.startswith("# zero:"):
                zeros.append(float(line.split(":", 1)[1].split()[0]))
            elif line[0].isdigit() or line[0] in "-.":
                a, b = line.split(",")
                g.append(float(a))
                M.append(float(b))
    return np.array(g), np.array(M), zeros


CANDIDATE_HEADER = "x,xdot,s_u_a,s_u_b,s_s_a,s_s_b,collinear,status"


def write_candidates_csv(path, outcomes) -> None:
    lines = [CANDIDATE_HEADER]
    for o in outcomes:
        c = o.candidate
        vals = [c.point[0], c.point[1], c.u.s_a, c.u.s_b, c.s.s_a, c.s.s_b]
        lines.append(",".join(rio.fmt_csv(v) for v in vals) + f",{int(c.collinear)},{o.status}")
    rio.write_text(path, "\n".join(lines) + "\n")
