"""Command-line experiment runner.

Each subcommand reads an optional TOML config, fills in defaults, and writes
its artifacts plus a ``manifest.json`` into one run directory. The manifest
holds the resolved config, its hash, library versions and the output file
list; wall-clock data goes to ``run_info.json`` so manifests of repeated
runs are byte-identical.

Exit codes: 0 ok, 1 bad config, 2 divergence, 3 planner stall, 4 truncated
RHC trace, 5 a counterexample did not reproduce.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._jsonutil import dumps
from .adjoint import gradient
from .certify import certify_system, rate_constants
from .errors import (
    CatalogError,
    ConfigError,
    DivergenceError,
    ForhcError,
    InadmissibleEpsError,
    StalledError,
)
from .linearize import linearize_along, matching_residual
from .models import (
    bump_counterexample_costs,
    bump_system,
    lookup,
    quadratic_cost,
    sin_drift_compliant_costs,
    sin_drift_counterexample_costs,
    sin_drift_system,
)
from .planner import CoarseSpec, PlannerConfig, brute_force_min, plan
from .rhc import RhcConfig, decay_report, export_trace, run_fo_rhc
from .riccati import SampleSpec
from .signals import ControlSignal, TimeGrid, random_smooth_control
from .simulate import eval_cost, rollout

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_STALLED, EXIT_TRUNCATED, EXIT_NOT_REPRODUCED = range(6)
OUT_ENV = "FORHC_OUT"
DEFAULT_OUT = "forhc_runs"

COST_PRESETS = {
    "default": (),
    "quadratic": ("q", "r", "q_f"),
    "sin_drift_compliant": ("q", "r", "q_f"),
    "sin_drift_counterexample": ("q_f",),
    "bump_counterexample": ("q", "r", "q_f"),
}


# ---------------------------------------------------------------------------
# config resolution

def _take(raw, key, default, kind=None):
    v = raw.pop(key, default)
    if kind is not None and v is not None:
        try:
            v = kind(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return v


def _no_extra(raw, where):
    if raw:
        raise ConfigError(f"unknown keys in {where}: {sorted(raw)}")


def _float_list(v):
    return [float(a) for a in np.atleast_1d(v)]


def _resolve_costs(raw):
    raw = dict(raw or {})
    preset = _take(raw, "preset", "default", str)
    if preset not in COST_PRESETS:
        raise ConfigError(f"unknown cost preset {preset!r}; choose from {sorted(COST_PRESETS)}")
    out = {"preset": preset}
    for key in COST_PRESETS[preset]:
        out[key] = _take(raw, key, None, float)
    _no_extra(raw, "costs")
    if preset == "quadratic" and None in (out["q"], out["r"], out["q_f"]):
        raise ConfigError("quadratic costs need q, r and q_f")
    return out


def _resolve_grid(raw):
    T = _take(raw, "T", 1.0, float)
    n_steps = _take(raw, "n_steps", None, int)
    max_dt = _take(raw, "max_dt", 0.01, float)
    if not (T > 0):
        raise ConfigError("T must be positive")
    return {"T": T, "n_steps": n_steps, "max_dt": max_dt}


def _resolve_control(raw):
    raw = dict(raw or {})
    kind = _take(raw, "kind", "zero", str)
    out = {"kind": kind}
    if kind == "constant":
        out["value"] = _float_list(_take(raw, "value", 0.0))
    elif kind == "random":
        out["scale"] = _take(raw, "scale", 1.0, float)
        out["n_modes"] = _take(raw, "n_modes", 3, int)
    elif kind != "zero":
        raise ConfigError(f"unknown control kind {kind!r}; use zero, constant or random")
    _no_extra(raw, "control")
    return out


def _resolve_dataclass(cls, raw, where, overrides=None):
    raw = dict(raw or {})
    base = asdict(cls(**(overrides or {})))
    out = {}
    for f in fields(cls):
        v = raw.pop(f.name, base[f.name])
        out[f.name] = [list(map(float, x)) for x in v] if f.name == "extra_initial" else v
        if isinstance(out[f.name], tuple):
            out[f.name] = list(out[f.name])
    _no_extra(raw, where)
    try:
        _build_dataclass(cls, out)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return out


def _build_dataclass(cls, values):
    kw = dict(values)
    for k, v in kw.items():
        if isinstance(v, list):
            kw[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
    return cls(**kw)


def _common(raw, seed, needs_grid=True):
    raw = dict(raw)
    cfg = {"system": _take(raw, "system", "sin_drift", str)}
    try:
        entry = lookup(cfg["system"])
    except CatalogError as exc:
        raise ConfigError(exc.args[0]) from None
    cfg["seed"] = int(seed if seed is not None else _take(raw, "seed", 0, int))
    raw.pop("seed", None)
    x0 = _take(raw, "x0", None)
    cfg["x0"] = [0.0] * entry.system.n if x0 is None else _float_list(x0)
    if len(cfg["x0"]) != entry.system.n:
        raise ConfigError(f"x0 must have {entry.system.n} entries for {cfg['system']}")
    cfg["costs"] = _resolve_costs(raw.pop("costs", None))
    if needs_grid:
        cfg["grid"] = _resolve_grid(raw)
    return cfg, raw


def resolve_config(command, raw, seed=None):
    """Fill in defaults and validate; the result is what gets hashed."""
    raw = dict(raw or {})
    if command == "counterexamples":
        return _resolve_counterexamples(raw, seed)
    if command == "certify":
        cfg, raw = _common(raw, seed, needs_grid=False)
        cfg["delta"] = _take(raw, "delta", None, float)
        cfg["sample"] = _resolve_dataclass(SampleSpec, raw.pop("sample", None), "sample",
                                           {"seed": cfg["seed"]})
        _no_extra(raw, "config")
        return cfg
    cfg, raw = _common(raw, seed)
    cfg["control"] = _resolve_control(raw.pop("control", None))
    if command in ("plan", "rhc"):
        cfg["planner"] = _resolve_dataclass(PlannerConfig, raw.pop("planner", None), "planner")
    if command == "rhc":
        cfg["delta"] = _take(raw, "delta", 0.5, float)
        cfg["n_replans"] = _take(raw, "n_replans", 20, int)
        cfg["certify"] = bool(_take(raw, "certify", True))
        cfg["sample"] = _resolve_dataclass(SampleSpec, raw.pop("sample", None), "sample",
                                           {"seed": cfg["seed"]})
    _no_extra(raw, "config")
    return cfg


def _resolve_counterexamples(raw, seed):
    sd = dict(raw.pop("sin_drift", None) or {})
    bp = dict(raw.pop("bump", None) or {})
    cfg = {
        "seed": int(seed if seed is not None else _take(raw, "seed", 0, int)),
        "sin_drift": {
            "horizons": _float_list(_take(sd, "horizons", [1.0, 5.0, 20.0])),
            "brute_T": _take(sd, "brute_T", 5.0, float),
            "brute_n_steps": _take(sd, "brute_n_steps", 100, int),
            "brute_levels": _float_list(_take(sd, "brute_levels", np.linspace(-4, 2, 7))),
            "brute_nodes": _take(sd, "brute_nodes", 4, int),
            "rhc_T": _take(sd, "rhc_T", 30.0, float),
            "delta": _take(sd, "delta", 0.5, float),
            "n_replans": _take(sd, "n_replans", 20, int),
            "eps0": _take(sd, "eps0", 1e-3, float),
        },
        "bump": {
            "r_values": _float_list(_take(bp, "r_values", [0.1, 1.0, 10.0])),
            "horizons": _float_list(_take(bp, "horizons", [1.0, 5.0])),
        },
    }
    raw.pop("seed", None)
    _no_extra(sd, "sin_drift")
    _no_extra(bp, "bump")
    _no_extra(raw, "config")
    return cfg


def config_hash(cfg):
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# object construction

def _system(cfg):
    return lookup(cfg["system"])


def _costs(cfg, entry):
    c = cfg["costs"]
    p = c["preset"]
    n, m = entry.system.n, entry.system.m

    def given(**kw):
        return {k: v for k, v in kw.items() if v is not None}

    try:
        if p == "default":
            return entry.costs
        if p == "quadratic":
            return quadratic_cost(c["q"], c["r"], c["q_f"], n, m)
        if p == "sin_drift_compliant":
            return sin_drift_compliant_costs(c["q"], c["r"], c["q_f"])
        if p == "sin_drift_counterexample":
            return sin_drift_counterexample_costs(**given(q_f=c["q_f"]))
        return bump_counterexample_costs(**given(q=c["q"], r=c["r"], q_f=c["q_f"]))
    except ValueError as exc:
        raise ConfigError(f"costs: {exc}") from None


def _grid(cfg):
    g = cfg["grid"]
    try:
        if g["n_steps"] is not None:
            return TimeGrid(g["T"], g["n_steps"])
        return TimeGrid.default(g["T"], g["max_dt"])
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None


def _control(cfg, grid, m):
    c = cfg["control"]
    if c["kind"] == "zero":
        return ControlSignal.zeros(grid, m)
    if c["kind"] == "constant":
        v = c["value"]
        if len(v) == 1 and m > 1:
            v = v * m
        if len(v) != m:
            raise ConfigError(f"constant control needs {m} values")
        return ControlSignal.constant(grid, v)
    rng = np.random.default_rng(cfg["seed"])
    return random_smooth_control(grid, m, rng, scale=c["scale"], n_modes=c["n_modes"])


# ---------------------------------------------------------------------------
# subcommands; each writes into ``out`` and returns (exit code, status, files)

def _write(out, name, text):
    (out / name).write_text(text)
    return name


def cmd_simulate(cfg, out, log):
    entry = _system(cfg)
    costs = _costs(cfg, entry)
    grid = _grid(cfg)
    u = _control(cfg, grid, entry.system.m)
    try:
        res = eval_cost(entry.system, costs, u, cfg["x0"])
    except DivergenceError as exc:
        files = [_write(out, "summary.json", dumps({"diverged": True, "time": exc.time}))]
        log(f"diverged at t={exc.time:.6g}")
        return EXIT_DIVERGED, "diverged", files
    files = [
        _write(out, "summary.json", dumps(res.summary())),
        _write(out, "trajectory.csv", res.trajectory.to_csv()),
        _write(out, "control.csv", u.to_csv()),
    ]
    log(f"J = {res.J:.10g}")
    return EXIT_OK, "ok", files


def cmd_plan(cfg, out, log):
    entry = _system(cfg)
    costs = _costs(cfg, entry)
    grid = _grid(cfg)
    u0 = _control(cfg, grid, entry.system.m)
    pcfg = _build_dataclass(PlannerConfig, cfg["planner"])
    code, status = EXIT_OK, "ok"
    try:
        res = plan(entry.system, costs, cfg["x0"], u0, pcfg)
    except DivergenceError as exc:
        files = [_write(out, "result.json", dumps({"diverged": True, "time": exc.time}))]
        log(f"initial guess diverged at t={exc.time:.6g}")
        return EXIT_DIVERGED, "diverged", files
    except StalledError as exc:
        res = exc.result
        code, status = EXIT_STALLED, "stalled"
    summary = dict(res.summary(), threshold=res.threshold, stalled=code == EXIT_STALLED)
    files = [
        _write(out, "result.json", dumps(summary)),
        _write(out, "control.csv", res.u_out.to_csv()),
    ]
    log(f"{status}: J {res.J_in:.6g} -> {res.J_out:.6g}, |grad| = {res.eps_measured:.3e}, "
        f"{res.iterations} iterations")
    return code, status, files


def cmd_certify(cfg, out, log):
    entry = _system(cfg)
    costs = _costs(cfg, entry)
    spec = _build_dataclass(SampleSpec, cfg["sample"])
    cert = certify_system(entry.system, costs, spec, delta=cfg["delta"])
    files = [_write(out, "certificate.json", cert.to_json())]
    flags = ", ".join(f"{k}={'pass' if v['pass'] else 'FAIL'}" for k, v in sorted(cert.assumptions.items()))
    log(f"{entry.name}: {flags}")
    return EXIT_OK, "ok", files


def cmd_rhc(cfg, out, log):
    entry = _system(cfg)
    costs = _costs(cfg, entry)
    grid = _grid(cfg)
    u0 = _control(cfg, grid, entry.system.m)
    try:
        rc = RhcConfig(grid.horizon, cfg["delta"], cfg["n_replans"], cfg["x0"], u0,
                       _build_dataclass(PlannerConfig, cfg["planner"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    files = []
    cert = constants = None
    if cfg["certify"]:
        cert = certify_system(entry.system, costs, _build_dataclass(SampleSpec, cfg["sample"]),
                              delta=cfg["delta"])
        files.append(_write(out, "certificate.json", cert.to_json()))
        if math.isfinite(cert.C1) and math.isfinite(cert.C2):
            try:
                constants = rate_constants(cert, cfg["delta"], grid.horizon, rc.planner.eps0)
                files.append(_write(out, "rhc_constants.json", dumps(constants.to_dict())))
            except InadmissibleEpsError as exc:
                log(f"no rate constants: {exc}")
    try:
        trace = run_fo_rhc(entry.system, costs, rc)
    except DivergenceError as exc:
        log(f"diverged at t={exc.time:.6g}")
        return EXIT_DIVERGED, "diverged", files
    report = decay_report(trace, constants, cert)
    files += export_trace(trace, out, report)
    norms = trace.norms
    log(f"{len(trace.cycles)} cycles, |x| {norms[0]:.4g} -> {norms[-1]:.4g}, "
        f"bound {'n/a' if report.passed is None else ('holds' if report.passed else 'VIOLATED')}")
    if trace.truncated:
        log(f"truncated: {trace.failure}")
        return EXIT_TRUNCATED, "truncated", files
    return EXIT_OK, "ok", files


def sin_drift_counterexample_report(c):
    """Stationarity, suboptimality and RHC stuckness at ``x0 = 3 pi / 4``."""
    system = sin_drift_system()
    costs = sin_drift_counterexample_costs()
    x0 = [3 * math.pi / 4]
    u_bad = -1 / math.sqrt(2)
    grads = []
    for T in c["horizons"]:
        u = ControlSignal.constant(TimeGrid.default(T), [u_bad])
        g = gradient(system, costs, u, x0)
        grads.append({"T": T, "grad_norm": g.eps_measured, "pass": bool(g.eps_measured <= 1e-7)})
    grid = TimeGrid(c["brute_T"], c["brute_n_steps"])
    J_bad = eval_cost(system, costs, ControlSignal.constant(grid, [u_bad]), x0).J
    bf = brute_force_min(system, costs, x0, CoarseSpec(grid, tuple(c["brute_levels"]), c["brute_nodes"]))
    drop = 1 - bf.J / J_bad
    brute = {"T": c["brute_T"], "J_stationary": J_bad, "J_best": bf.J, "lattice_best": bf.lattice_best,
             "n_candidates": bf.n_candidates, "relative_drop": drop, "pass": bool(drop >= 0.05)}
    rgrid = TimeGrid.default(c["rhc_T"])
    rc = RhcConfig(c["rhc_T"], c["delta"], c["n_replans"], x0, ControlSignal.constant(rgrid, [u_bad]),
                   PlannerConfig(eps0=c["eps0"]))
    trace = run_fo_rhc(system, costs, rc)
    dev = float(np.max(np.abs(trace.measured[:, 0] - x0[0])))
    stuck = {"T": c["rhc_T"], "n_cycles": len(trace.cycles), "truncated": trace.truncated,
             "max_deviation": dev, "iterations": [cy.result.iterations for cy in trace.cycles if cy.result],
             "pass": bool(dev <= 1e-6 and not trace.truncated and len(trace.cycles) == c["n_replans"])}
    ok = all(g["pass"] for g in grads) and brute["pass"] and stuck["pass"]
    return {"stationary_gradient": grads, "brute_force": brute, "rhc_stuck": stuck, "reproduced": ok}


def bump_counterexample_report(c):
    """Stationarity of ``u = 0`` at ``x0 = (5, -5)`` for every ``r`` and the matching residual."""
    system = bump_system()
    x0 = [5.0, -5.0]
    grads = []
    for r in c["r_values"]:
        costs = bump_counterexample_costs(q=1.0, r=r)
        for T in c["horizons"]:
            u = ControlSignal.zeros(TimeGrid.default(T), 1)
            g = gradient(system, costs, u, x0)
            grads.append({"r": r, "T": T, "grad_norm": g.eps_measured, "pass": bool(g.eps_measured <= 1e-7)})
    u = ControlSignal.zeros(TimeGrid.default(max(c["horizons"])), 1)
    path = linearize_along(system, rollout(system, u, x0), u)
    res = float(np.max(matching_residual(path)))
    matching = {"max_residual": res, "pass": bool(abs(res - 10.0) <= 1e-6)}
    ok = all(g["pass"] for g in grads) and matching["pass"]
    return {"stationary_gradient": grads, "matching_residual": matching, "reproduced": ok}


def cmd_counterexamples(cfg, out, log):
    sd = sin_drift_counterexample_report(cfg["sin_drift"])
    bp = bump_counterexample_report(cfg["bump"])
    ok = sd["reproduced"] and bp["reproduced"]
    files = [_write(out, "report.json", dumps({"sin_drift": sd, "bump": bp, "reproduced": ok}))]
    log(f"sin_drift: {'reproduced' if sd['reproduced'] else 'NOT reproduced'}; "
        f"bump: {'reproduced' if bp['reproduced'] else 'NOT reproduced'}")
    return (EXIT_OK, "ok", files) if ok else (EXIT_NOT_REPRODUCED, "not_reproduced", files)


COMMANDS = {
    "simulate": cmd_simulate,
    "plan": cmd_plan,
    "certify": cmd_certify,
    "rhc": cmd_rhc,
    "counterexamples": cmd_counterexamples,
}


# ---------------------------------------------------------------------------
# entry point

def versions():
    return {"forhc": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def build_parser():
    p = argparse.ArgumentParser(prog="forhc", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=COMMANDS[name].__doc__)
        sp.add_argument("--config", type=Path, help="TOML experiment config")
        sp.add_argument("--out", type=Path, help=f"run directory (default: ${OUT_ENV} or ./{DEFAULT_OUT}, "
                                                "plus <command>-<config hash>)")
        sp.add_argument("--seed", type=int, help="overrides the seed in the config")
        sp.add_argument("--quiet", action="store_true", help="no progress output")
        sp.add_argument("--force", action="store_true", help="replace an existing manifest")
    return p


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def main(argv=None):
    args = build_parser().parse_args(argv)

    def log(msg):
        if not args.quiet:
            print(msg)

    def fail(msg):
        print(f"forhc {args.command}: {msg}", file=sys.stderr)
        return EXIT_CONFIG

    if args.seed is not None and not 0 <= args.seed < 2**64:
        return fail("seed must be an unsigned 64-bit integer")
    try:
        cfg = resolve_config(args.command, _load_config(args.config), args.seed)
    except ConfigError as exc:
        return fail(str(exc))
    digest = config_hash(cfg)
    if args.out is not None:
        out = args.out
    else:
        out = Path(os.environ.get(OUT_ENV, DEFAULT_OUT)) / f"{args.command}-{digest[:12]}"
    manifest = out / "manifest.json"
    if manifest.exists() and not args.force:
        return fail(f"{manifest} exists; pass --force to replace it")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    try:
        code, status, files = COMMANDS[args.command](cfg, out, log)
    except ConfigError as exc:
        return fail(str(exc))
    except DivergenceError as exc:
        print(f"forhc {args.command}: {exc}", file=sys.stderr)
        code, status, files = EXIT_DIVERGED, "diverged", []
    except ForhcError as exc:
        print(f"forhc {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    record = {
        "command": args.command,
        "config": cfg,
        "config_hash": digest,
        "exit_code": code,
        "outputs": sorted(files),
        "status": status,
        "versions": versions(),
    }
    manifest.write_text(dumps(record))
    (out / "run_info.json").write_text(dumps({"started": t0, "wall_seconds": time.time() - t0}))
    log(f"wrote {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
