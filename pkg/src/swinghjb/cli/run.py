"""Run orchestration: solve, extract the policy, verify, write artifacts.

Every artifact is written deterministically (sorted JSON keys, floats as
shortest round-trip decimals, no timestamps), so rerunning a configuration
reproduces the files byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..contract import ContractKind
from ..policy import ExercisePolicy, extract_policy
from ..solver.grid import ValueSurface
from ..solver.hjb import (
    solve_penalized,
    solve_penalty_ladder,
    solve_strict,
    solve_strict_normalized,
    solve_unconstrained,
)
from ..verify.lattice import LatticeOracle
from ..verify.montecarlo import mc_policy_value
from ..verify.properties import (
    CheckResult,
    PropertyReport,
    ladder_gaps,
    run_property_suite,
    sample_rho_domain,
    default_p_window,
)
from .config import RunConfig

log = logging.getLogger(__name__)

FORMAT_VERSION = "1"
FORMATS = {
    "surface_csv": "surface-csv/1: header t,p,z,value; rows in (t, p, z) index order; "
                   "nan marks nodes outside the domain",
    "surface_json": "surface-grid/1: grid axes, provenance, contract, config hash",
    "exercise_curve": "exercise-curve/1: header t,p,z_bar; inf/-inf when every/no node buys",
    "ladder_convergence": "ladder-convergence/1: header c,sup_gap,successive_rel_gap",
    "verification": "verification/1: reports with per-check name, status, worst, location",
    "manifest": "manifest/1",
}


def _num(x: float) -> str:
    return repr(float(x))


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite_or_str(x: float):
    """JSON has no inf/nan; write them as strings."""
    x = float(x)
    return x if np.isfinite(x) else repr(x)


def write_surface(surface: ValueSurface, stem: Path, config_hash: str) -> list[Path]:
    g = surface.grid
    csv_path = stem.with_suffix(".csv")
    t_s = [_num(x) for x in g.t_nodes]
    p_s = [_num(x) for x in g.p_nodes]
    z_s = [_num(x) for x in g.z_nodes]
    with open(csv_path, "w", newline="") as fh:
        fh.write("t,p,z,value\n")
        for n, t in enumerate(t_s):
            for j, p in enumerate(p_s):
                row = surface.values[n, j]
                fh.write("".join(f"{t},{p},{z},{_num(v)}\n" for z, v in zip(z_s, row)))
    meta = {
        "format": FORMATS["surface_json"],
        "provenance": surface.label,
        "penalty_weight": surface.penalty_weight,
        "grid": {
            "t": {"min": float(g.t_nodes[0]), "max": float(g.t_nodes[-1]), "cells": g.t_nodes.size - 1},
            "p": {"min": float(g.p_nodes[0]), "max": float(g.p_nodes[-1]), "cells": g.p_nodes.size - 1},
            "z": {"min": float(g.z_nodes[0]), "max": float(g.z_nodes[-1]), "cells": g.z_nodes.size - 1},
        },
        "contract": surface.contract.describe(),
        "config_hash": config_hash,
        "values_file": csv_path.name,
    }
    json_path = stem.with_suffix(".json")
    json_path.write_text(_dumps(meta))
    return [csv_path, json_path]


def write_exercise_curve(policy: ExercisePolicy, path: Path) -> Path:
    policy.to_csv(path)
    return path


def write_ladder_table(table: dict, path: Path) -> Path:
    with open(path, "w", newline="") as fh:
        fh.write("c,sup_gap,successive_rel_gap\n")
        steps = [""] + [_num(s) for s in table["successive_rel_gap"]]
        for c, gap, step in zip(table["c"], table["sup_gap"], steps):
            fh.write(f"{_num(c)},{_num(gap)},{step}\n")
    return path


def _oracle_checks(cfg: RunConfig, surface: ValueSurface, policy: ExercisePolicy) -> list[CheckResult]:
    v = cfg.verify
    c, model = cfg.contract, cfg.model
    t0, p0, z0 = v["start_t"], v["start_p"], v["start_z"]
    pde = float(surface.interpolate(t0, p0, z0))
    checks = []

    mc_dt = v["mc_dt"] or surface.grid.dt
    mc = mc_policy_value(model, c, policy, t0, p0, z0, v["n_paths"], mc_dt, v["seed"], workers=v["workers"])
    # First-order discretization error of the PDE value at the start state.
    allowance = v["mc_allowance_factor"] * surface.grid.relative_spacing() * max(abs(pde), 1.0)
    tol = 3 * mc.std_error + allowance
    gap = abs(mc.mean - pde)
    checks.append(CheckResult(
        "mc_vs_pde", "pass" if gap <= tol else "fail", gap, tol, {"t": t0, "p": p0, "z": z0},
        note="|MC value of the extracted policy - PDE value| <= 3 se + allowance",
        data={"pde": pde, **asdict(mc), "allowance": allowance},
    ))

    if c.kind is ContractKind.STRICT:
        n = v["lattice_n"]
        oracle = LatticeOracle(model, c, n, n, n)
        dp = oracle.value(t0, p0, z0)
        rel = abs(pde - dp) / max(abs(pde), 1e-300)
        checks.append(CheckResult(
            "lattice_vs_pde", "pass" if rel <= v["lattice_rtol"] else "fail", rel, v["lattice_rtol"],
            {"t": t0, "p": p0, "z": z0}, note="relative gap between PDE and lattice dynamic programming",
            data={"pde": pde, "lattice": dp, "lattice_n": n, "clamped_rows": oracle.clamped_rows},
        ))
    return checks


def _normalized_check(cfg: RunConfig, direct: ValueSurface, normalized: ValueSurface, p_window) -> CheckResult:
    v = cfg.verify
    samples = sample_rho_domain(cfg.contract, v["rho"], p_window, v["n_samples"], v["seed"])
    a = direct.interpolate(samples[:, 0], samples[:, 1], samples[:, 2])
    b = normalized.interpolate(samples[:, 0], samples[:, 1], samples[:, 2])
    gap = float(np.max(np.abs(a - b)))
    i = int(np.argmax(np.abs(a - b)))
    tol = v["normalized_rtol"] * direct.value_scale()
    return CheckResult(
        "normalized_vs_direct", "pass" if gap <= tol else "fail", gap, tol,
        {"t": float(samples[i, 0]), "p": float(samples[i, 1]), "z": float(samples[i, 2])},
        note="sup gap on rho-interior samples, relative to the value scale",
        data={"n_samples": v["n_samples"], "time_substeps": normalized.native.get("time_substeps")},
    )


def run_valuation(cfg: RunConfig, echo=print) -> tuple[int, list[Path]]:
    """Execute one configured run. Returns (exit status, written artifact paths)."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()
    model, contract, solver = cfg.model, cfg.contract, cfg.solver
    v = cfg.verify
    strict = contract.as_strict()
    written: list[Path] = []
    timings: dict[str, float] = {}

    def timed(name, fn, *args, **kw):
        start = time.perf_counter()
        result = fn(*args, **kw)
        timings[name] = time.perf_counter() - start
        echo(f"[swinghjb] {name}: {timings[name]:.2f}s")
        return result

    sgrid, rgrid = cfg.strict_grid(), cfg.rect_grid()
    direct = timed("solve_strict", solve_strict, model, strict, sgrid, solver)
    normalized = timed(
        "solve_strict_normalized", solve_strict_normalized, model, strict, sgrid, solver,
        cfg.section("solver")["normalized_n_z"],
    )
    ladder = timed("solve_penalty_ladder", solve_penalty_ladder, model, strict, rgrid, solver)
    upper = timed("solve_unconstrained", solve_unconstrained, model, strict, rgrid, solver)
    if contract.kind is ContractKind.PENALIZED:
        main = timed("solve_penalized", solve_penalized, model, contract, rgrid, solver)
    else:
        main = direct
    policy = extract_policy(main, contract)

    p_window = default_p_window(model, direct, cfg.p_ref)
    common = dict(p_ref=cfg.p_ref, n_samples=v["n_samples"], seed=v["seed"], config=solver, workers=v["workers"])
    reports: list[PropertyReport] = []
    if contract.kind is ContractKind.PENALIZED:
        reports.append(timed(
            "verify_penalized", run_property_suite, main, contract, model, policy=policy,
            perturbation_trials=v["perturbation_trials"], **common,
        ))
    strict_policy = policy if main is direct else extract_policy(direct, strict)
    strict_report = timed(
        "verify_strict", run_property_suite, direct, strict, model, policy=strict_policy, ladder=ladder,
        unconstrained=upper, rho=v["rho"], perturbation_trials=v["perturbation_trials"], **common,
    )
    reports.append(strict_report)
    norm_report = PropertyReport(normalized.label, normalized.value_scale(), p_window)
    norm_report.checks.append(_normalized_check(cfg, direct, normalized, p_window))
    reports.append(norm_report)
    oracle_report = PropertyReport(f"oracles({main.label})", main.value_scale(), p_window)
    oracle_report.checks.extend(timed("oracles", _oracle_checks, cfg, main, policy))
    reports.append(oracle_report)

    hard_failed = any(r.hard_failed for r in reports)
    warnings = [c.name for r in reports for c in r.checks if c.status == "warn"]

    if cfg.section("output")["write_surfaces"]:
        written += write_surface(main, out / f"surface_{main.label}", h)
        if main is not direct:
            written += write_surface(direct, out / f"surface_{direct.label}", h)
        written += write_surface(normalized, out / f"surface_{normalized.label}", h)
    written.append(write_exercise_curve(policy, out / "exercise_curve.csv"))
    table = ladder_gaps(ladder, direct, sample_rho_domain(strict, v["rho"], p_window, v["n_samples"], v["seed"]))
    written.append(write_ladder_table(table, out / "ladder_convergence.csv"))

    verification = {
        "format": FORMATS["verification"],
        "config_hash": h,
        "hard_failed": hard_failed,
        "warnings": warnings,
        "reports": [r.to_dict() for r in reports],
        "policy": {"multiple_crossings": policy.multiple_crossings, "diagnostics": policy.diagnostics},
    }
    vpath = out / "verification.json"
    vpath.write_text(_dumps(_sanitize(verification)))
    written.append(vpath)

    manifest = {
        "format": FORMATS["manifest"],
        "format_version": FORMAT_VERSION,
        "config_hash": h,
        "config": {k: val for k, val in cfg.values.items() if k != "output"},
        "config_source": Path(cfg.source).name,
        "versions": {
            "swinghjb": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "formats": FORMATS,
        "artifacts": [
            {"path": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest(), "config_hash": h}
            for p in written
        ],
        "hard_failed": hard_failed,
    }
    mpath = out / "manifest.json"
    mpath.write_text(_dumps(manifest))
    written.append(mpath)

    for r in reports:
        for c in r.checks:
            if c.status in ("fail", "warn"):
                echo(f"[swinghjb] {r.surface}: {c.name} {c.status.upper()} (worst {c.worst:.4g}, tol {c.tolerance})")
    echo(f"[swinghjb] {'FAILED' if hard_failed else 'ok'}: artifacts in {out}")
    return (1 if hard_failed else 0), written


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return _finite_or_str(obj)
    return obj
