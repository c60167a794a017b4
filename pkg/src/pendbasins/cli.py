"""``pendbasins`` command line: atlas, fast, full, compare, density, clusters, jumpscan, citable.

Settings come from an INI file (``--config``) with flags taking precedence.
Every command writes ``<command>.manifest.json`` into the output directory,
echoing the resolved configuration and the digest of each file written.

Exit codes: 0 ok, 2 configuration, 3 I/O, 4 numeric divergence, 5 atlas mismatch.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from pendbasins import __version__
from pendbasins.analysis import (
    DEFAULT_JUMP_THRESHOLD,
    DEFAULT_MASS_THRESHOLD,
    DEFAULT_R,
    contracted_region,
    density_map,
    find_clusters,
    jump_scan,
    overlay,
)
from pendbasins.atlas import AtlasError, Mesh, build_atlas, default_t_full, load_atlas, save_atlas
from pendbasins.attractor import BUCKET_NAMES, DIVERGED_ID
from pendbasins.dynamics import DampingProfile, SystemParams
from pendbasins.export import (
    atlas_image,
    basin_image,
    ci_table_csv,
    density_image,
    read_point_dump,
    write_clusters_csv,
    write_density_csv,
    write_point_dump,
    write_ppm,
    write_result_csv,
)
from pendbasins.fast_method import (
    BasinResult,
    ConfigurationError,
    InitialSet,
    accuracy,
    choose_t1,
    fast_basins,
    full_basins,
    movement_map,
)
from pendbasins.integrator import DivergenceError, IntegratorConfig, default_workers
from pendbasins.stats import ConfidenceSpec

OUTPUT_ENV = "PENDBASINS_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_ATLAS = 5

log = logging.getLogger("pendbasins")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    alpha: float = 0.5
    beta: float = 0.1
    gamma_i: float = 0.05
    gamma_f: float = 0.05
    t0: float = 0.0
    t0_list: list[float] = field(default_factory=list)
    initial: str = "random"  # random | mesh
    n: int = 10_000
    seed: int = 0
    mesh_step: float = 0.01
    scheme: str = "fixed_rk4"
    steps_per_period: int = 1000
    tol: float = 1e-10
    t_min: float = 0.0
    t_full: float | None = None
    time: float | None = None  # observation time for density / clusters
    atlas: str | None = None
    atlas_step: float = 0.01
    atlas_restrict: str = "none"  # none | contracted
    out: str = "."
    workers: int | None = None
    deterministic_order: bool = False
    merge_symmetric: bool = False
    confidence: float = 0.95
    r: float = DEFAULT_R
    mass_threshold: float = DEFAULT_MASS_THRESHOLD
    connectivity: int = 8
    jump_threshold: float = DEFAULT_JUMP_THRESHOLD
    dump: bool = False
    raster: bool = False
    results: list[str] = field(default_factory=list)

    @property
    def params(self) -> SystemParams:
        return SystemParams(self.alpha, self.beta)

    def profile(self, t0: float | None = None) -> DampingProfile:
        return DampingProfile(self.gamma_i, self.gamma_f, self.t0 if t0 is None else t0)

    @property
    def integrator(self) -> IntegratorConfig:
        if self.scheme == "fixed_rk4":
            return IntegratorConfig.rk4(self.steps_per_period)
        return IntegratorConfig.adaptive(self.tol)

    @property
    def n_workers(self) -> int:
        if self.deterministic_order:
            return 1
        return default_workers() if self.workers is None else self.workers

    def initial_set(self) -> InitialSet:
        if self.initial == "mesh":
            return InitialSet.from_mesh(Mesh.standard(self.mesh_step, self.mesh_step))
        return InitialSet.random(self.n, self.seed)

    def validate(self) -> None:
        for name in ("alpha", "beta", "gamma_i", "gamma_f", "t0", "t_min", "tol", "r"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.gamma_i < 0 or self.gamma_f < 0:
            raise ConfigError("damping must be non-negative")
        if self.t0 < 0 or self.t_min < 0:
            raise ConfigError("t0 and t_min must be non-negative")
        if self.initial not in ("random", "mesh"):
            raise ConfigError(f"initial must be 'random' or 'mesh', got {self.initial!r}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.scheme not in ("fixed_rk4", "adaptive_dp45"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.steps_per_period < 1 or self.tol <= 0:
            raise ConfigError("steps_per_period must be >= 1 and tol > 0")
        if self.mesh_step <= 0 or self.atlas_step <= 0 or self.r <= 0:
            raise ConfigError("mesh_step, atlas_step and r must be positive")
        if self.atlas_restrict not in ("none", "contracted"):
            raise ConfigError(f"atlas_restrict must be 'none' or 'contracted', got {self.atlas_restrict!r}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.confidence not in (0.90, 0.95, 0.99):
            raise ConfigError("confidence must be 0.90, 0.95 or 0.99")
        if not 0 < self.mass_threshold < 1:
            raise ConfigError("mass_threshold must lie in (0, 1)")
        if self.connectivity not in (4, 8):
            raise ConfigError("connectivity must be 4 or 8")
        if self.t_full is not None and self.t_full <= 0:
            raise ConfigError("t_full must be positive")
        if any(b < a for a, b in zip(self.t0_list, self.t0_list[1:])):
            raise ConfigError("t0_list must be ascending")

    def manifest_config(self) -> dict:
        d = asdict(self)
        d["resolved_workers"] = self.n_workers
        return d


_INI_KEYS = {
    "system": ("alpha", "beta"),
    "damping": ("gamma_i", "gamma_f", "t0", "t0_list"),
    "initial": ("initial", "n", "seed", "mesh_step"),
    "integrator": ("scheme", "steps_per_period", "tol"),
    "run": ("t_min", "t_full", "time", "atlas", "atlas_step", "atlas_restrict", "out", "workers",
            "deterministic_order", "merge_symmetric", "confidence", "dump", "raster"),
    "analysis": ("r", "mass_threshold", "connectivity", "jump_threshold"),
}
# INI spellings that differ from the field name
_INI_ALIASES = {"min_observation_time": "t_min", "mode": "initial", "output_dir": "out"}


def parse_t0_list(text: str) -> list[float]:
    """``"a:b:step"`` (inclusive) or a comma-separated list."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        try:
            a, b, step = (float(x) for x in text.split(":"))
        except ValueError as exc:
            raise ConfigError(f"bad t0 range {text!r}; expected start:stop:step") from exc
        if step <= 0 or b < a:
            raise ConfigError(f"bad t0 range {text!r}")
        k = int(math.floor((b - a) / step + 1e-9))
        return [round(a + i * step, 12) for i in range(k + 1)]
    try:
        return [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad t0 list {text!r}") from exc


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(RunConfig)}
    t = types[name]
    if name == "t0_list":
        return parse_t0_list(raw)
    if name == "results":
        return raw.split()
    raw = raw.strip()
    try:
        if "bool" in t:
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        if t.startswith("int"):
            return None if raw.lower() == "none" else int(raw)
        if t.startswith("float"):
            return None if raw.lower() == "none" else float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return None if raw.lower() == "none" and "None" in t else raw


def read_ini(path) -> dict:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out = {}
    for section in cp.sections():
        allowed = _INI_KEYS.get(section)
        if allowed is None:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in cp.items(section):
            name = _INI_ALIASES.get(key, key)
            if name not in allowed:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            out[name] = _coerce(name, raw)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run settings (override the config file)")
    g.add_argument("--config", help="INI file with [system] [damping] [initial] [integrator] [run] [analysis]")
    for name, typ, hlp in [
        ("alpha", float, "system parameter alpha"), ("beta", float, "forcing amplitude beta"),
        ("gamma-i", float, "initial damping"), ("gamma-f", float, "final damping"),
        ("t0", float, "ramp duration T0"), ("n", int, "number of random initial conditions"),
        ("seed", int, "seed for random initial conditions"), ("mesh-step", float, "mesh spacing for mesh initial sets"),
        ("steps-per-period", int, "RK4 steps per forcing period"), ("tol", float, "adaptive tolerance"),
        ("t-min", float, "minimum observation time for the fast method"),
        ("t-full", float, "full-integration horizon"), ("time", float, "observation time for density/clusters"),
        ("atlas", str, "atlas file"), ("atlas-step", float, "atlas mesh spacing"),
        ("out", str, f"output directory (default ${OUTPUT_ENV} or .)"), ("workers", int, "worker threads"),
        ("confidence", float, "confidence level"), ("r", float, "density cell size"),
        ("mass-threshold", float, "cluster mass threshold"), ("connectivity", int, "cluster adjacency (4 or 8)"),
        ("jump-threshold", float, "jump threshold as a fraction"),
    ]:
        g.add_argument(f"--{name}", type=typ, help=hlp)
    g.add_argument("--t0-list", help="ramp durations: start:stop:step or comma list")
    g.add_argument("--initial", choices=["random", "mesh"])
    g.add_argument("--scheme", choices=["fixed_rk4", "adaptive_dp45"])
    g.add_argument("--atlas-restrict", choices=["none", "contracted"])
    for flag in ("deterministic-order", "merge-symmetric", "dump", "raster"):
        g.add_argument(f"--{flag}", action="store_true", default=None)
    g.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pendbasins", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pendbasins {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, hlp in COMMAND_HELP.items():
        sp = sub.add_parser(name, parents=[common], help=hlp, description=hlp)
        if name == "compare":
            sp.add_argument("results", nargs="*", help="two point dumps to compare; omit to compute fast and full")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config:
        values.update(read_ini(args.config))
    if "out" not in values and os.environ.get(OUTPUT_ENV):
        values["out"] = os.environ[OUTPUT_ENV]
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        values[f.name] = parse_t0_list(v) if f.name == "t0_list" else v
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


class Run:
    """Output bookkeeping for one command."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.out)
        if not self.out.is_dir():
            raise FileNotFoundError(f"output directory {self.out} does not exist")
        self.outputs: dict[str, str] = {}
        self.summary: dict = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def record(self, path: Path) -> Path:
        self.outputs[path.name] = hashlib.blake2b(path.read_bytes(), digest_size=16).hexdigest()
        return path

    def write_manifest(self) -> Path:
        doc = {
            "artifact": "pendbasins",
            "version": __version__,
            "command": self.command,
            "config": self.cfg.manifest_config(),
            "outputs": dict(sorted(self.outputs.items())),
            "summary": self.summary,
        }
        p = self.path(f"{self.command}.manifest.json")
        p.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
        return p


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(type(x))


def _emit(msg: str) -> None:
    print(msg, flush=True)


def _area_lines(result: BasinResult, spec: ConfidenceSpec) -> list[str]:
    return [f"{r['name']} {100 * r['relative_area']:.2f}% +- {100 * r['ci_half_width']:.2f}"
            for r in result.table(spec)]


def _result_outputs(run: Run, stem: str, result: BasinResult, spec: ConfidenceSpec) -> None:
    if run.cfg.merge_symmetric:
        result = result.merged_symmetric()
    meta = {"alpha": run.cfg.alpha, "beta": run.cfg.beta, "gamma_i": run.cfg.gamma_i,
            "gamma_f": run.cfg.gamma_f, "t0": run.cfg.t0}
    run.record(write_result_csv(run.path(f"{stem}.csv"), result, spec, meta))
    if run.cfg.dump:
        run.record(write_point_dump(run.path(f"{stem}.points"), result))
    if run.cfg.raster:
        if result.initial is not None and result.initial.mode == "mesh":
            run.record(write_ppm(run.path(f"{stem}.ppm"), basin_image(result)))
        else:
            log.warning("basin raster skipped: needs --initial mesh")
    run.summary[stem] = {r["name"] if r["id"] < 0 else f"{r['id']}:{r['name']}": r["relative_area"]
                         for r in result.table(spec)}
    for line in _area_lines(result, spec):
        _emit(f"{stem}: {line}")


def _t_full(cfg: RunConfig) -> float:
    if cfg.t_full is not None:
        return cfg.t_full
    return default_t_full(cfg.gamma_f)


def _load_matching_atlas(cfg: RunConfig):
    if not cfg.atlas:
        raise ConfigError("this command needs --atlas")
    return load_atlas(cfg.atlas)


def _diverged(result: BasinResult) -> int:
    return int((result.labels == DIVERGED_ID).sum())


def cmd_atlas(run: Run) -> None:
    cfg = run.cfg
    mesh = Mesh.standard(cfg.atlas_step, cfg.atlas_step)
    restrict = None
    if cfg.atlas_restrict == "contracted":
        t1 = choose_t1(cfg.t0, cfg.t_min)
        rec = movement_map(cfg.params, cfg.profile(), cfg.initial_set(), t1, cfg.integrator, cfg.n_workers)
        restrict = contracted_region(rec, cfg.r).dilate(1)
    atlas = build_atlas(cfg.params, cfg.gamma_f, mesh, cfg.t_full, cfg.integrator, restrict_to=restrict,
                        workers=cfg.n_workers)
    path = Path(cfg.atlas) if cfg.atlas else run.path("atlas.pba")
    if not path.parent.is_dir():
        raise FileNotFoundError(f"directory {path.parent} does not exist")
    save_atlas(atlas, path)
    run.record(path)
    run.record(path.with_suffix(".meta"))
    if cfg.raster:
        run.record(write_ppm(run.path("atlas.ppm"), atlas_image(atlas)))
    areas = atlas.relative_areas()
    run.summary = {"nodes": atlas.mesh.size, "covered": atlas.n_covered,
                   "uncovered": atlas.mesh.size - atlas.n_covered, "unresolved": atlas.unresolved_count,
                   "areas": {f"{i}:{atlas.catalog[i].name}": a for i, a in areas.items()}}
    for i, a in areas.items():
        _emit(f"{atlas.catalog[i].name} {100 * a:.2f}%")
    _emit(f"nodes {atlas.mesh.size}, covered {atlas.n_covered}, uncovered {atlas.mesh.size - atlas.n_covered}")


def cmd_fast(run: Run) -> int:
    cfg = run.cfg
    atlas = _load_matching_atlas(cfg)
    res = fast_basins(atlas, cfg.params, cfg.profile(), cfg.initial_set(), cfg.t_min, cfg.integrator, cfg.n_workers)
    _result_outputs(run, "fast", res, ConfidenceSpec(cfg.confidence))
    run.summary["out_of_mesh"] = res.extra.get("out_of_mesh", 0)
    return EXIT_DIVERGED if _diverged(res) else EXIT_OK


def cmd_full(run: Run) -> int:
    cfg = run.cfg
    res = full_basins(cfg.params, cfg.profile(), cfg.initial_set(), _t_full(cfg), cfg.integrator,
                      workers=cfg.n_workers)
    _result_outputs(run, "full", res, ConfidenceSpec(cfg.confidence))
    return EXIT_DIVERGED if _diverged(res) else EXIT_OK


def _result_from_dump(path) -> BasinResult:
    rec, catalog = read_point_dump(path)
    init = InitialSet("random", rec["theta"].copy(), rec["theta_dot"].copy())
    return BasinResult(rec["label"].copy(), catalog, "full", 0.0, init)


def cmd_compare(run: Run) -> int:
    cfg = run.cfg
    if cfg.results:
        if len(cfg.results) != 2:
            raise ConfigError("compare takes exactly two point dumps")
        a, b = (_result_from_dump(p) for p in cfg.results)
    else:
        atlas = _load_matching_atlas(cfg)
        init = cfg.initial_set()
        a = fast_basins(atlas, cfg.params, cfg.profile(), init, cfg.t_min, cfg.integrator, cfg.n_workers)
        b = full_basins(cfg.params, cfg.profile(), init, _t_full(cfg), cfg.integrator, workers=cfg.n_workers)
        spec = ConfidenceSpec(cfg.confidence)
        _result_outputs(run, "fast", a, spec)
        _result_outputs(run, "full", b, spec)
    if cfg.merge_symmetric:
        a, b = a.merged_symmetric(), b.merged_symmetric()
    acc = accuracy(a, b)
    run.summary["accuracy_percent"] = acc
    _emit(f"accuracy {acc:.4f}%")
    return EXIT_OK


def _arrivals(cfg: RunConfig):
    t = cfg.time if cfg.time is not None else choose_t1(cfg.t0, cfg.t_min)
    t = choose_t1(t)
    return movement_map(cfg.params, cfg.profile(), cfg.initial_set(), t, cfg.integrator, cfg.n_workers)


def cmd_density(run: Run) -> int:
    cfg = run.cfg
    rec = _arrivals(cfg)
    grid = density_map(rec, cfg.r)
    occ = grid.support()
    meta = {"T": rec.t, "seed": cfg.seed if cfg.initial == "random" else "none"}
    run.record(write_density_csv(run.path("density.csv"), grid, meta))
    run.record(write_ppm(run.path("density.ppm"), density_image(grid)))
    run.record(write_ppm(run.path("occupancy.ppm"), density_image(occ)))
    ci, cj = grid.densest()
    th, v = grid.geometry.center(ci, cj)
    run.summary = {"T": rec.t, "cells": len(grid), "fraction_of_s": occ.fraction_of_s(),
                   "densest": [float(th), float(v)], "diverged": int(rec.diverged.sum())}
    _emit(f"T={rec.t:.6g}: {len(grid)} occupied cells ({100 * occ.fraction_of_s():.2f}% of S), "
          f"densest cell at ({float(th):.3f}, {float(v):.3f})")
    return EXIT_DIVERGED if rec.diverged.any() else EXIT_OK


def cmd_clusters(run: Run) -> int:
    cfg = run.cfg
    rec = _arrivals(cfg)
    grid = density_map(rec, cfg.r)
    clusters = find_clusters(grid, cfg.mass_threshold, cfg.connectivity)
    names = None
    if cfg.atlas:
        atlas = _load_matching_atlas(cfg)
        ids = overlay(atlas, clusters)
        names = [atlas.catalog[i].name if i >= 0 else BUCKET_NAMES[int(i)] for i in ids]
    run.record(write_clusters_csv(run.path("clusters.csv"), clusters, grid.total, names,
                                  {"T": rec.t, "r": cfg.r, "mass_threshold": cfg.mass_threshold}))
    run.summary = {"T": rec.t, "clusters": len(clusters), "masses": [c.mass for c in clusters]}
    _emit(f"{len(clusters)} clusters at T={rec.t:.6g}")
    for k, c in enumerate(clusters):
        tag = f" {names[k]}" if names else ""
        _emit(f"  {k}: mass {c.mass:.4f} at ({c.centroid[0]:.3f}, {c.centroid[1]:.3f}){tag}")
    return EXIT_OK


def cmd_jumpscan(run: Run) -> int:
    cfg = run.cfg
    t0s = cfg.t0_list or [cfg.t0]

    def progress(t0, res):
        log.info("T0=%g done", t0)

    scan = jump_scan(cfg.params, cfg.gamma_i, cfg.gamma_f, t0s, cfg.initial_set(), _t_full(cfg), cfg.integrator,
                     cfg.jump_threshold, cfg.n_workers, progress)
    areas = scan.areas()
    names = [f"{i}:{e.name}" for i, e in enumerate(scan.catalog)]
    lines = [f"# N: {cfg.n if cfg.initial == 'random' else 'mesh'}", f"# seed: {cfg.seed}",
             "t0," + ",".join(names)]
    for t0, row in zip(t0s, areas):
        lines.append(f"{t0:.10g}," + ",".join(f"{100 * a:.10g}" for a in row))
    p = run.path("jumpscan.csv")
    p.write_text("\n".join(lines) + "\n")
    run.record(p)
    jumps = scan.jumps
    run.summary = {"jumps": [{"t0_before": j.t0_before, "t0_after": j.t0_after, "attractor": j.name,
                              "delta_percent": 100 * j.delta} for j in jumps],
                   "errors": {str(k): v for k, v in scan.errors.items()}}
    _emit(f"{len(jumps)} jumps detected")
    for j in jumps:
        _emit(f"  {j.name}: {100 * j.delta:+.2f} pp between T0={j.t0_before:g} and {j.t0_after:g}")
    return EXIT_DIVERGED if scan.errors else EXIT_OK


def cmd_citable(run: Run) -> int:
    text = ci_table_csv(spec=ConfidenceSpec(run.cfg.confidence))
    p = run.path("ci_table.csv")
    p.write_text(text)
    run.record(p)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "atlas": cmd_atlas, "fast": cmd_fast, "full": cmd_full, "compare": cmd_compare,
    "density": cmd_density, "clusters": cmd_clusters, "jumpscan": cmd_jumpscan, "citable": cmd_citable,
}
COMMAND_HELP = {
    "atlas": "build a constant-damping atlas",
    "fast": "basins by the fast method (needs an atlas)",
    "full": "basins by full integration",
    "compare": "pointwise accuracy of fast against full",
    "density": "density map and contracted region at an observation time",
    "clusters": "dense clusters of the density map, optionally overlaid on an atlas",
    "jumpscan": "full basins across a list of ramp durations, with jumps flagged",
    "citable": "table of confidence-interval half-widths",
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "compare":
        args.results = args.results or None
    try:
        cfg = resolve_config(args)
        run = Run(args.command, cfg)
        code = COMMANDS[args.command](run) or EXIT_OK
        run.write_manifest()
        return code
    except ConfigurationError as exc:
        _fail(f"atlas mismatch: {exc}")
        return EXIT_ATLAS
    except ConfigError as exc:
        _fail(f"configuration error: {exc}")
        return EXIT_CONFIG
    except DivergenceError as exc:
        _fail(f"numeric divergence: {exc}")
        return EXIT_DIVERGED
    except (OSError, AtlasError) as exc:
        _fail(f"I/O error: {exc}")
        return EXIT_IO
    except ValueError as exc:
        _fail(f"configuration error: {exc}")
        return EXIT_CONFIG


def _fail(msg: str) -> None:
    print(f"pendbasins: {msg}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
