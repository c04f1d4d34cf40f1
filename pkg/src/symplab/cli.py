"""Command line experiment runner.

Every subcommand reads one TOML config, writes its reports into the output
directory and exits with 0 (success), 2 (bad mathematical input or config)
or 3 (numerical non-convergence). Failures print a JSON diagnostic to stderr.

    symplab calabi --config twist.toml
    symplab flux --config shear.toml --output-dir runs/shear
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .action import build_action, calabi, inequality_check, mean_actions, p_epsilon_census
from .equidist import default_dictionary, defect_sequence_experiment, restrict_orbit_set, orbit_membership
from .errors import EmptyCensusError, PreconditionError, SymplabError
from .forms import standard_primitive
from .geometry import Annulus, CappedSurface, Disk, LatticeTorus, cap_surface, verify_area_form
from .homology import flux_report, isotopy_for_map, named_cycle, polyline_cycle
from .maps import IntegratorConfig, build_map, extend_boundary_rotation
from .orbits import OrbitSet, find_orbits, orbits_to_rows

log = logging.getLogger("symplab")

SCHEMA_VERSION = 1
SUBCOMMANDS = ("cap-check", "orbits", "calabi", "inequality", "census", "equidist", "flux", "extend")
OUTPUT_ENV = "SYMPLAB_OUTPUT_DIR"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SurfaceSpec(_Strict):
    kind: Literal["disk", "annulus", "lattice"] = "disk"
    area: PositiveFloat = 1.0
    width: PositiveFloat = 1.0
    n: PositiveInt = 64


class CapSpec(_Strict):
    target_area: PositiveFloat
    delta: PositiveFloat = 0.1
    grid: PositiveInt = 100


class MapSpec(_Strict):
    name: str = "identity"
    params: dict[str, Union[float, str, list[float]]] = Field(default_factory=dict)


class IntegratorSpec(_Strict):
    steps: PositiveInt = 64
    order: Literal[2, 4, 6] = 4
    tol: PositiveFloat = 1e-10
    max_steps: PositiveInt = 8192
    newton_tol: PositiveFloat = 1e-12


class OrbitSpec(_Strict):
    d_max: PositiveInt = 3
    seeds: PositiveInt = 8
    tol: PositiveFloat = 1e-10
    max_iter: PositiveInt = 40


class ActionSpec(_Strict):
    beta: Literal["standard"] = "standard"
    # boundary circle used for normalisation; must be given on multi-boundary surfaces
    gamma: Optional[int] = None
    basepoint: Optional[list[float]] = None
    n_mc: PositiveInt = 2000
    tol: PositiveFloat = 1e-9
    eps: PositiveFloat = 0.5
    weighting: Literal["voronoi", "uniform"] = "voronoi"
    level_grid: PositiveInt = 24


class DictionarySpec(_Strict):
    name: Literal["default"] = "default"
    size: PositiveInt = 5
    schedule: list[PositiveInt] = Field(default_factory=lambda: [1, 2, 3])
    weighting: Literal["uniform", "area"] = "uniform"


class FluxSpec(_Strict):
    cycles: list[Union[str, list[list[float]]]] = Field(default_factory=lambda: ["core"])
    q_max: PositiveInt = 50
    tol: PositiveFloat = 1e-9


class OutputSpec(_Strict):
    dir: str = "symplab-out"


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    seed: int = 0
    workers: PositiveInt = 1
    surface: SurfaceSpec = Field(default_factory=SurfaceSpec)
    cap: Optional[CapSpec] = None
    map: MapSpec = Field(default_factory=MapSpec)
    integrator: IntegratorSpec = Field(default_factory=IntegratorSpec)
    orbits: OrbitSpec = Field(default_factory=OrbitSpec)
    action: ActionSpec = Field(default_factory=ActionSpec)
    dictionary: DictionarySpec = Field(default_factory=DictionarySpec)
    flux: FluxSpec = Field(default_factory=FluxSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)


def parse_config(text):
    """Validate TOML text into an ExperimentConfig."""
    return ExperimentConfig.model_validate(tomllib.loads(text))


def load_config(path):
    return parse_config(Path(path).read_text())


def dump_config(cfg):
    return tomli_w.dumps(cfg.model_dump(exclude_none=True))


def config_hash(cfg):
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------- output


def _clean(obj):
    """JSON-safe copy: numpy scalars to python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def write_json(path, payload):
    payload = dict(payload, schema_version=SCHEMA_VERSION)
    Path(path).write_text(json.dumps(_clean(payload), sort_keys=True, indent=2) + "\n")
    return path


def emit_plot_data(rows, path, columns=None):
    """Headered CSV with a stable column order; an empty table is an error."""
    rows = list(rows)
    if not rows:
        raise EmptyCensusError(f"nothing to write to {Path(path).name}")
    columns = list(columns or rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, quoting=csv.QUOTE_MINIMAL)
        w.writeheader()
        for r in rows:
            w.writerow({k: _csv_value(r.get(k, "")) for k in columns})
    return path


def _csv_value(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# ---------------------------------------------------------------- building blocks


def make_surface(spec):
    if spec.kind == "disk":
        return Disk(spec.area)
    if spec.kind == "annulus":
        return Annulus(spec.width)
    return LatticeTorus(spec.n)


def integrator_config(spec):
    return IntegratorConfig(**spec.model_dump())


class Run:
    """Per-invocation state: config, output directory and stage timings."""

    def __init__(self, cfg, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.timings = {}
        self.stats = {}
        self.artifacts = []
        self._surface = self._phi = None

    def stage(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    @property
    def surface(self):
        if self._surface is None:
            self._surface = make_surface(self.cfg.surface)
        return self._surface

    @property
    def phi(self):
        if self._phi is None:
            self._phi = self.stage("map", build_map, self.surface, self.cfg.map.name,
                                   self.cfg.map.params, integrator_config(self.cfg.integrator))
            if hasattr(self._phi, "steps"):
                self.stats["integrator_steps"] = int(self._phi.steps)
        return self._phi

    def capped(self):
        if self.cfg.cap is None:
            raise PreconditionError("this subcommand needs a [cap] section")
        return self.stage("cap", cap_surface, self.surface, self.cfg.cap.target_area,
                          self.cfg.cap.delta)

    def orbits(self, phi=None):
        o = self.cfg.orbits
        found = self.stage("orbits", find_orbits, phi or self.phi, o.d_max, seeds=o.seeds,
                           tol=o.tol, max_iter=o.max_iter, workers=self.cfg.workers)
        self.stats["orbits"] = _clean(getattr(found, "stats", {}) or {})
        self.stats["orbit_count"] = len(found)
        return found

    def action(self):
        a = self.cfg.action
        surf = self.surface
        gamma = a.gamma
        if gamma is None:
            if len(surf.boundary_circles) != 1:
                raise PreconditionError("action.gamma must be chosen explicitly on this surface")
            gamma = 0
        profile = self.stage("action", build_action, self.phi, standard_primitive(surf), gamma,
                             basepoint=a.basepoint, seed=self.cfg.seed)
        self.stats["exactness_defect"] = profile.exactness_defect
        return profile

    def calabi(self, profile):
        a = self.cfg.action
        return self.stage("calabi", calabi, profile, n_mc=a.n_mc, seed=self.cfg.seed)

    def json(self, name, payload):
        self.artifacts.append(name)
        return write_json(self.out / name, payload)

    def csv(self, name, rows, columns=None):
        self.artifacts.append(name)
        return emit_plot_data(rows, self.out / name, columns)

    def manifest(self, subcommand, status):
        # timestamps live only here so the reports stay byte-reproducible
        payload = {
            "subcommand": subcommand,
            "status": status,
            "config_hash": config_hash(self.cfg),
            "tool_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "finished_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "stage_seconds": self.timings,
            "convergence": self.stats,
            "artifacts": self.artifacts,
        }
        write_json(self.out / "manifest.json", payload)


# ---------------------------------------------------------------- subcommands


def cmd_cap_check(run):
    capped = run.capped()
    defect = run.stage("verify", verify_area_form, capped, run.cfg.cap.grid)
    cap = capped.caps[0]
    A, B, n, d = capped.base.total_area, capped.total_area, capped.n_caps, capped.delta
    report = {
        "r0": cap.r0, "r1": cap.r1,
        "r0_formula": math.sqrt((B - A) / (n * math.pi)),
        "r1_formula": math.sqrt((B - A + n * d) / (n * math.pi)),
        "pullback_defect": defect,
        "n_caps": n, "delta": d, "base_area": A, "target_area": B,
        "area_ratio": str(capped.area_ratio()),
    }
    run.json("cap_check.json", report)
    print(f"r0 = {cap.r0!r}")
    print(f"r1 = {cap.r1!r}")
    print(f"pullback defect = {defect:.3e}")
    return report


def _orbit_payload(orbits):
    return [o.summary() for o in orbits]


def cmd_orbits(run):
    orbits = run.orbits()
    rows = orbits_to_rows(orbits)
    run.csv("orbits.csv", rows)
    run.json("orbits.json", {"count": len(orbits), "orbits": _orbit_payload(orbits)})
    print(f"{len(orbits)} orbits of period <= {run.cfg.orbits.d_max}")
    return rows


def _level_rows(run, profile):
    rows = []
    for chart, pts in run.surface.seed_grid(run.cfg.action.level_grid):
        vals = profile.f(chart, pts)
        for (u, v), f in zip(pts, vals):
            rows.append({"chart": chart, "u": float(u), "v": float(v), "f": float(f)})
    return rows


def cmd_calabi(run):
    profile = run.action()
    rep = run.calabi(profile)
    run.json("calabi.json", {"calabi": rep.to_dict(), "action": profile.describe(),
                             "area": run.surface.total_area})
    run.csv("level_set.csv", _level_rows(run, profile), ["chart", "u", "v", "f"])
    print(f"Cal = {rep.value!r} (quadrature error {rep.quad_error:.1e})")
    return rep


def _mean_action_rows(records, cal):
    # ids come from the deterministic orbit order; sort by period then id
    rows = [{"orbit_id": k, "period": r.orbit.period, "mean_action": r.mean_action,
             "cal_gap": r.mean_action - cal, "birkhoff": r.birkhoff, "spread": r.spread}
            for k, r in enumerate(records)]
    rows.sort(key=lambda r: (r["period"], r["orbit_id"]))
    return rows


def _census(run):
    profile = run.action()
    rep = run.calabi(profile)
    orbits = run.orbits()
    if not orbits:
        raise EmptyCensusError("orbit search found nothing")
    records = run.stage("mean_actions", mean_actions, profile, orbits)
    run.csv("mean_actions.csv", _mean_action_rows(records, rep.value))
    return profile, rep, records


def cmd_inequality(run):
    profile, rep, records = _census(run)
    verdict = inequality_check(profile, records, cal=rep.value, tol=run.cfg.action.tol)
    run.json("inequality.json", {"calabi": rep.value, "census_size": len(records),
                                 "verdict": verdict.to_dict()})
    print(f"{verdict.verdict}: inf gap {verdict.inf_gap:.3e}, sup gap {verdict.sup_gap:.3e}")
    return verdict


def cmd_census(run):
    profile, rep, records = _census(run)
    a = run.cfg.action
    fr = p_epsilon_census(profile, records, a.eps, cal=rep.value, weighting=a.weighting,
                          seed=run.cfg.seed)
    verdict = inequality_check(profile, records, cal=rep.value, tol=a.tol)
    run.json("census.json", {"calabi": rep.to_dict(), "census_size": len(records), "eps": a.eps,
                             "fractions": fr.to_dict(), "inequality": verdict.to_dict()})
    print(f"P+ fraction {fr.plus:.4f}, P- fraction {fr.minus:.4f} ({fr.weighting})")
    return fr


def cmd_equidist(run):
    d = run.cfg.dictionary
    dictionary = run.stage("dictionary", default_dictionary, run.surface, d.size)
    orbits = run.orbits()
    reports = run.stage("defects", defect_sequence_experiment, run.phi, dictionary,
                        d.schedule, weighting=d.weighting, orbits=orbits)
    rows = [{"level": r.level, "function": name, "defect": float(val)}
            for r in reports for name, val in zip(r.names, r.defects)]
    run.csv("defects.csv", rows, ["level", "function", "defect"])
    run.json("equidist.json", {"dictionary": dictionary.names,
                               "averages": dictionary.averages,
                               "locality_defect": dictionary.locality_defect,
                               "levels": [r.to_dict() for r in reports]})
    for r in reports:
        print(f"level {r.level}: max defect {r.max_defect:.3e} {r.note}".rstrip())
    return reports


def _cycles(surface, spec):
    out = []
    for k, c in enumerate(spec.cycles):
        if isinstance(c, str):
            out.append(named_cycle(surface, c))
        else:
            out.append(polyline_cycle(surface, c, id=f"polyline-{k}"))
    return out


def cmd_flux(run):
    iso = isotopy_for_map(run.phi)
    cycles = _cycles(run.surface, run.cfg.flux)
    capped_area = run.cfg.cap.target_area if run.cfg.cap else None
    rep = run.stage("flux", flux_report, iso, cycles, q_max=run.cfg.flux.q_max,
                    tol=run.cfg.flux.tol, capped_area=capped_area)
    run.json("flux.json", rep.to_dict())
    for cid, f, v in zip(rep.cycles, rep.fluxes, rep.cycle_verdicts):
        print(f"{cid}: flux {f!r} -> {v}")
    return rep


def cmd_extend(run):
    capped = run.capped()
    ext = run.stage("extend", extend_boundary_rotation, run.phi, capped)
    orbits = run.orbits(ext)
    everything = OrbitSet.from_orbits(orbits)
    kept = restrict_orbit_set(everything, capped)
    in_cap = sum(1 for o in orbits if not orbit_membership(o, capped).any())
    run.json("extend.json", {
        "rho": list(ext.rho), "sigma": list(ext.sigma),
        "gluing_defect": ext.smoothness_defect,
        "orbits_total": len(orbits), "orbits_in_base": len(kept), "orbits_in_caps": in_cap,
        "straddling": 0,
    })
    if orbits:
        run.csv("extend_orbits.csv", orbits_to_rows(orbits))
    print(f"rho = {list(ext.rho)}, gluing defect {ext.smoothness_defect:.3e}")
    print(f"{len(orbits)} orbits: {len(kept)} in the base surface, {in_cap} in the caps")
    return ext


COMMANDS = {
    "cap-check": cmd_cap_check,
    "orbits": cmd_orbits,
    "calabi": cmd_calabi,
    "inequality": cmd_inequality,
    "census": cmd_census,
    "equidist": cmd_equidist,
    "flux": cmd_flux,
    "extend": cmd_extend,
}


def output_dir(cfg, override=None):
    return Path(override or os.environ.get(OUTPUT_ENV) or cfg.output.dir)


def run(subcommand, cfg, out_dir=None):
    """Execute one subcommand; returns the exit code."""
    if subcommand not in COMMANDS:
        raise PreconditionError(f"unknown subcommand {subcommand!r}")
    r = Run(cfg, output_dir(cfg, out_dir))
    try:
        COMMANDS[subcommand](r)
    except SymplabError as exc:
        r.manifest(subcommand, f"error: {type(exc).__name__}")
        raise
    r.manifest(subcommand, "ok")
    return 0


def _diagnose(exc, code):
    diag = exc.diagnostics() if isinstance(exc, SymplabError) else {
        "error": type(exc).__name__, "message": str(exc)}
    diag["exit_code"] = code
    print(json.dumps(_clean(diag), sort_keys=True), file=sys.stderr)
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="symplab", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=COMMANDS[name].__name__.replace("cmd_", "").replace("_", " "))
        sp.add_argument("-c", "--config", required=True, help="TOML experiment config")
        sp.add_argument("-o", "--output-dir", help=f"output directory (else ${OUTPUT_ENV}, else config)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--workers", type=int, help="override the worker count")
        sp.add_argument("-v", "--verbose", action="store_true")
    dump = sub.add_parser("dump-config", help="print a validated config (or the defaults) as TOML")
    dump.add_argument("-c", "--config")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.command == "dump-config":
            sys.stdout.write(dump_config(cfg))
            return 0
        updates = {k: v for k, v in (("seed", args.seed), ("workers", args.workers)) if v is not None}
        if updates:
            cfg = ExperimentConfig.model_validate({**cfg.model_dump(), **updates})
        return run(args.command, cfg, args.output_dir)
    except ValidationError as exc:
        print(json.dumps({"error": "ConfigError", "message": str(exc), "exit_code": 2},
                         sort_keys=True), file=sys.stderr)
        return 2
    except SymplabError as exc:
        return _diagnose(exc, exc.exit_code)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        return _diagnose(exc, 2 if isinstance(exc, tomllib.TOMLDecodeError) else 1)


if __name__ == "__main__":
    sys.exit(main())
