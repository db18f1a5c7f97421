"""``stogeo`` command line: run, validate and report experiments.

Exit codes: 0 success, 2 invalid config or unreadable input, 3 numerical
failure, 4 acceptance-check failure.
"""
from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from . import io
from .errors import ConfigError, NumericalError
from .experiments import EXPERIMENTS, STOCHASTIC, normalize, run_experiment
from .stochastic_variational import MIN_ENSEMBLE

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 2, 3, 4

_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 1}
_vec = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_coeffs = {"type": "object", "patternProperties": {"^[0-9]+$": {"type": "number"}}, "additionalProperties": False}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["experiment"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "T": _pos, "dt": _pos, "nx": {"type": "integer", "minimum": 8}, "nt": _count, "n_paths": _count,
        "tolerance": _pos, "residual_tolerance": _pos, "picard_tolerance": _pos, "max_iter": _count,
        "n_modes": _count, "n_outer": {"type": "integer", "minimum": 2}, "n_rebranch": _count,
        "theta0": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 3.141592653589793},
        "m0": _vec, "v0": _vec, "u0": _vec, "direction": _vec,
        "sigmas": {"type": "array", "items": _pos, "minItems": 2},
        "refinements": {"type": "array", "items": {"type": "integer", "minimum": 8}, "minItems": 2},
        "conservation_T": _pos,
        "expect": {"enum": ["critical", "non-critical"]},
        "profile": {"type": "object", "additionalProperties": False,
                    "properties": {"cos": _coeffs, "sin": _coeffs}},
        "manifold": {
            "type": "object", "required": ["type"], "additionalProperties": False,
            "properties": {"type": {"enum": ["sphere", "flat", "euclidean", "line", "circle", "torus"]},
                           "radius": _pos, "dim": _count}},
        "algebra": {
            "type": "object", "required": ["type"], "additionalProperties": False,
            "properties": {"type": {"enum": ["so3", "abelian", "torus", "custom"]},
                           "inertia": {"type": "array", "items": _pos, "minItems": 3, "maxItems": 3},
                           "noise": {"oneOf": [{"enum": ["principal", "none"]},
                                               {"type": "array", "items": _vec}]},
                           "noise_amplitude": {"type": "number"}, "dim": _count,
                           "metric": {"type": "array", "items": _vec},
                           "structure_constants": {"type": "array"}}},
        "drift": {
            "type": "object", "required": ["type"], "additionalProperties": False,
            "properties": {"type": {"enum": ["zero", "constant", "burgers", "cole-hopf", "sine", "rotation",
                                             "swirl", "sphere-potential"]},
                           "value": _vec, "amplitude": {"type": "number"}, "omega": {"type": "number"},
                           "a": {"type": "number"},
                           "profile": {"type": "object", "additionalProperties": False,
                                       "properties": {"cos": _coeffs, "sin": _coeffs}}}},
    },
}


def _field(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def check_config(config) -> tuple[dict, list]:
    """Schema validation plus sanity checks; returns the normalized config and warnings."""
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(config), key=lambda e: list(e.path))
    if errors:
        raise ConfigError("; ".join(f"{_field(e)}: {e.message}" for e in errors))
    cfg = normalize(config)
    name = cfg["experiment"]
    warnings = []
    if "T" in cfg and "dt" in cfg and cfg["dt"] > cfg["T"]:
        raise ConfigError(f"dt: time step {cfg['dt']} exceeds the horizon T = {cfg['T']}")
    if name in STOCHASTIC and "n_paths" in cfg and cfg["n_paths"] < MIN_ENSEMBLE:
        warnings.append(f"n_paths: {cfg['n_paths']} is below the statistical minimum {MIN_ENSEMBLE}")
    if name in STOCHASTIC and cfg.get("dt", 0) > 1e-2:
        warnings.append(f"dt: {cfg['dt']} is coarse; weak discretization bias O(dt) may exceed Monte Carlo error")
    if name == "frame-diffusion" and cfg.get("manifold", {}).get("type") != "sphere":
        raise ConfigError("manifold.type: frame-diffusion runs on a sphere")
    if name == "holonomy" and cfg.get("manifold", {}).get("type") != "sphere":
        raise ConfigError("manifold.type: holonomy runs on a sphere")
    if name in ("burgers-oracle", "criticality", "fbsde-burgers") and "nx" in cfg:
        nt = cfg.get("nt", round(cfg["T"] / cfg.get("dt", cfg["T"])))
        step = cfg["T"] / nt
        dx = 2 * np.pi / cfg["nx"]
        prof = cfg.get("profile") or cfg.get("drift", {}).get("profile") or {}
        amp = sum(abs(v) for part in prof.values() for v in part.values())
        umax = amp / max(1e-12, 1 - amp) * max([1] + [int(k) for part in prof.values() for k in part])
        if umax * step / dx > 1:
            warnings.append(f"nt: advective Courant number {umax * step / dx:.2g} exceeds 1")
    if name == "geodesic-check" and cfg.get("manifold", {}).get("type") != "sphere" and (
            "m0" not in config or "v0" not in config):
        raise ConfigError("m0/v0: required for geodesic-check on flat manifolds")
    return cfg, warnings


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _versions() -> dict:
    out = {"python": platform.python_version(), "platform": platform.platform()}
    for pkg in ("numpy", "scipy", "jsonschema", "artifact"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def cmd_run(args) -> int:
    try:
        raw = load_config(args.config)
        cfg, warnings = check_config(raw)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    out = Path(args.output or raw.get("output") or "stogeo-out")
    out.mkdir(parents=True, exist_ok=True)
    h = io.config_hash(cfg)
    manifest = {"config": cfg, "config_hash": h, "seed": cfg["seed"], "versions": _versions()}
    start = time.perf_counter()
    status, code, result = "ok", EXIT_OK, None
    try:
        result = run_experiment(cfg, out, h)
    except NumericalError as exc:
        status, code = "numerical-failure", EXIT_NUMERICAL
        io.write_json(out / "failure.json", {"status": status, "message": str(exc), "config_hash": h})
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if result is not None:
        report = {"experiment": cfg["experiment"], "config_hash": h, "seed": cfg["seed"],
                  "records": result.records, "checks": [c.record() for c in result.checks],
                  "table": [list(r) for r in result.table], "hypothesis": result.hypothesis,
                  "files": result.files}
        io.write_json(out / "report.json", report)
        if not result.passed:
            status, code = "acceptance-failure", EXIT_ACCEPTANCE
            io.write_json(out / "failure.json", {"status": status, "config_hash": h,
                                                 "failed_checks": [c.record() for c in result.checks
                                                                   if not c.passed]})
    manifest.update({"status": status, "exit_code": code, "wall_time_s": time.perf_counter() - start,
                     "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json")})
    io.write_json(out / "manifest.json", manifest)
    print(f"{cfg['experiment']}: {status} ({out})")
    return code


def cmd_validate(args) -> int:
    try:
        cfg, warnings = check_config(load_config(args.config))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for w in warnings:
        print(f"warning: {w}")
    print("ok")
    print(json.dumps(cfg, sort_keys=True, indent=2))
    return EXIT_OK


def _fmt(v) -> str:
    return f"{v:.6g}" if isinstance(v, (int, float)) and not isinstance(v, bool) else str(v)


def cmd_report(args) -> int:
    d = Path(args.directory)
    try:
        manifest = io.read_json(d / "manifest.json")
        report = io.read_json(d / "report.json") if (d / "report.json").exists() else None
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: missing or corrupt manifest in {d}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not isinstance(manifest, dict) or "config_hash" not in manifest:
        print(f"error: corrupt manifest in {d}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"experiment  {manifest['config'].get('experiment')}")
    print(f"config hash {manifest['config_hash']}")
    print(f"seed        {manifest['seed']}")
    print(f"status      {manifest.get('status')}")
    if report is None:
        failure = d / "failure.json"
        if failure.exists():
            print(f"failure     {io.read_json(failure).get('message')}")
        return EXIT_OK
    print()
    for row in report["table"]:
        label, vals = row[0], row[1:]
        if len(vals) == 2:
            print(f"  {label:<48} {_fmt(vals[0])} ± {_fmt(vals[1])}")
        else:
            print(f"  {label:<48} {_fmt(vals[0])}")
    if report["checks"]:
        print()
        for c in report["checks"]:
            print(f"  [{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: {_fmt(c['value'])} "
                  f"(threshold {_fmt(c['threshold'])})")
    for k, v in report.get("hypothesis", {}).items():
        print(f"  finding {k}: {v}")
    print()
    for f in report["files"]:
        if f.endswith(".csv"):
            print(f"  csv: {d / f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stogeo", description="Stochastic geodesic experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("-c", "--config", required=True)
    r.add_argument("-o", "--output")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="validate a config without running it")
    v.add_argument("-c", "--config", required=True)
    v.set_defaults(func=cmd_validate)
    s = sub.add_parser("report", help="summarize a result directory")
    s.add_argument("directory")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
