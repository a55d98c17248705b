"""Batch front door: scenario files in, structured result files out.

A scenario is a single TOML file with [model], [u], [task] and [output]
sections.  The CLI subcommand selects the task; command-line --set
overrides beat file values; unknown keys anywhere are hard errors.  Outputs
are JSON for structured results, CSV for curves/grids/traces, and a
gnuplot-friendly .dat mirror of every CSV.  Exit codes: 0 success, 2
validation error, 3 numerical failure, 4 property violation in verify mode.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .action import (action_derivatives, determine_t0, equi_lipschitz_check,
                     minimize_action)
from .catalog import catalog_names, get_entry
from .characteristics import propagate_singularity
from .errors import HJSError
from .expressions import ExprError
from .model import HamiltonianView, LagrangianModel, check_tonelli
from .mountainpass import BarrierProblem, classify_dichotomy, global_minimizers, \
    mountain_pass
from .operators import (gradient_limit_p0, inf_convolve, lasry_lions_field,
                        sup_convolve, verify_P3, verify_P5)
from .semiconcave import (SemiconcaveFn, estimate_superdifferential,
                          semiconcavity_check, viscosity_check)

SCHEMA_VERSION = 1
TASKS = ("fundamental", "regularize", "characteristic", "mountainpass", "verify")


class ScenarioError(ValueError):
    """Scenario file or override failed validation."""


# -- scenario schema -----------------------------------------------------------

_ALLOWED = {
    "": {"schema_version", "seed", "model", "u", "task", "output"},
    "model": {"form", "dim", "A", "drift", "potential", "lagrangian",
              "witnesses"},
    "model.witnesses": {"theta", "c0", "c1"},
    "u": {"form", "C", "center", "planes", "points", "expr"},
    "task": {"name", "x", "y", "t", "t1", "nodes", "restarts", "nsteps",
             "box_lo", "box_hi", "resolution", "localized", "search_radius",
             "path_nodes", "iters", "catalog", "t0"},
    "output": {"directory", "formats"},
}


def _check_keys(section: dict, path: str):
    allowed = _ALLOWED.get(path)
    if allowed is None:
        return
    for key, val in section.items():
        if key not in allowed:
            where = path or "top level"
            raise ScenarioError(f"unknown key {key!r} in {where}")
        sub = f"{path}.{key}" if path else key
        if isinstance(val, dict) and sub in _ALLOWED:
            _check_keys(val, sub)


def load_scenario(path: str, overrides=()) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"scenario file does not parse: {exc}")
    for ov in overrides:
        if "=" not in ov:
            raise ScenarioError(f"override {ov!r} is not key=value")
        key, raw = ov.split("=", 1)
        try:
            val = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            val = raw
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ScenarioError(f"override path {key!r} crosses a scalar")
        node[parts[-1]] = val
    _check_keys(data, "")
    data.setdefault("seed", 0)
    if not isinstance(data["seed"], int):
        raise ScenarioError("seed must be an integer")
    return data


def build_model(spec: dict) -> LagrangianModel:
    if "form" not in spec:
        raise ScenarioError("model.form is required")
    form = spec["form"]
    wit = spec.get("witnesses", {})
    kw = {"theta": wit.get("theta"), "c0": wit.get("c0"), "c1": wit.get("c1")}
    try:
        if form == "quadratic_kinetic":
            return LagrangianModel.quadratic_kinetic(spec["A"], **kw)
        if form == "mechanical":
            return LagrangianModel.mechanical(
                spec.get("A", np.eye(int(spec.get("dim", 1)))),
                potential=spec.get("potential"),
                drift=spec.get("drift"), **kw)
        if form == "custom":
            if "lagrangian" not in spec or "dim" not in spec:
                raise ScenarioError("custom model needs lagrangian and dim")
            return LagrangianModel.custom(spec["lagrangian"], int(spec["dim"]),
                                          **kw)
    except (ExprError, ValueError, KeyError) as exc:
        raise ScenarioError(f"model: {exc}")
    raise ScenarioError(f"model.form must be one of quadratic_kinetic, "
                        f"mechanical, custom (got {form!r})")


def build_u(spec: dict, dim: int) -> SemiconcaveFn:
    form = spec.get("form")
    C = float(spec.get("C", 0.0))
    try:
        if form == "neg_abs":
            return SemiconcaveFn.neg_abs(dim, center=spec.get("center"))
        if form == "min_of_planes":
            return SemiconcaveFn.min_of_planes(spec["planes"])
        if form == "neg_distance_to_set":
            return SemiconcaveFn.neg_distance_to_set(spec["points"], C=C)
        if form == "expression":
            return SemiconcaveFn.from_expression(spec["expr"], dim, C=C)
    except (ExprError, ValueError, KeyError) as exc:
        raise ScenarioError(f"u: {exc}")
    raise ScenarioError(f"u.form must be one of neg_abs, min_of_planes, "
                        f"neg_distance_to_set, expression (got {form!r})")


def _require_positive(task: dict, key: str) -> float:
    if key not in task:
        raise ScenarioError(f"task.{key} is required")
    val = float(task[key])
    if val <= 0:
        raise ScenarioError(f"task.{key} must be positive (got {val})")
    return val


# -- output writers -------------------------------------------------------------

def write_json(path: str, payload: dict):
    payload = dict(payload)
    payload.setdefault("schema_version", SCHEMA_VERSION)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path: str, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in rows:
            w.writerow(row)


def write_dat(path: str, rows):
    """Gnuplot mirror: '#'-prefixed header, whitespace-separated columns."""
    with open(path, "w", encoding="utf-8") as fh:
        head, *body = rows
        fh.write("# " + " ".join(str(h) for h in head) + "\n")
        for row in body:
            fh.write(" ".join(repr(float(v)) if isinstance(v, (int, float))
                              else str(v) for v in row) + "\n")


def _emit_table(outdir: str, stem: str, rows, formats) -> list[str]:
    written = []
    if "csv" in formats:
        p = os.path.join(outdir, f"{stem}.csv")
        write_csv(p, rows)
        written.append(p)
    if "dat" in formats:
        p = os.path.join(outdir, f"{stem}.dat")
        write_dat(p, rows)
        written.append(p)
    return written


def _curve_rows(curve):
    n = curve.nodes.shape[1]
    header = ["s"] + [f"xi{i+1}" for i in range(n)] + [f"p{i+1}" for i in range(n)]
    rows = [header]
    for i, s in enumerate(curve.times):
        rows.append([s, *curve.nodes[i], *curve.dual_arc[i]])
    return rows


# -- tasks ----------------------------------------------------------------------

def run_fundamental(model, u, task, seed, outdir, formats, jobs):
    x = np.asarray(task.get("x"), dtype=float)
    y = np.asarray(task.get("y"), dtype=float)
    if task.get("x") is None or task.get("y") is None:
        raise ScenarioError("task.x and task.y are required for fundamental")
    t = _require_positive(task, "t")
    N = int(task.get("nodes", 64))
    restarts = int(task.get("restarts", 5))
    res = minimize_action(model, x, y, t, N=N, restarts=restarts, seed=seed)
    chk = action_derivatives(model, res)
    payload = res.to_dict()
    payload["derivative_fd_rel_errors"] = [chk.rel_err_x, chk.rel_err_y,
                                           chk.rel_err_t]
    files = []
    jp = os.path.join(outdir, "action_result.json")
    write_json(jp, payload)
    files.append(jp)
    files += _emit_table(outdir, "curve", _curve_rows(res.minimizer), formats)
    return {"value": res.value}, files


def run_regularize(model, u, task, seed, outdir, formats, jobs):
    t = _require_positive(task, "t")
    lo = np.asarray(task.get("box_lo"), dtype=float)
    hi = np.asarray(task.get("box_hi"), dtype=float)
    if task.get("box_lo") is None or task.get("box_hi") is None:
        raise ScenarioError("task.box_lo and task.box_hi are required")
    resolution = int(task.get("resolution", 21))
    localized = bool(task.get("localized", False))
    field = lasry_lions_field(u, model, t, (lo, hi), resolution=resolution,
                              seed=seed, localized=localized, jobs=jobs)
    n = model.dim
    header = [f"x{i+1}" for i in range(n)] + ["value"] + \
        [f"grad{i+1}" for i in range(n)]
    rows = [header]
    flat_vals = field.values.ravel()
    flat_grads = field.gradients.reshape(-1, n)
    for p, v, g in zip(field.points, flat_vals, flat_grads):
        rows.append([*p, v, *g])
    files = _emit_table(outdir, "field", rows, formats)
    jp = os.path.join(outdir, "field_summary.json")
    write_json(jp, field.summary_dict())
    files.append(jp)
    return field.summary_dict(), files


def run_characteristic(model, u, task, seed, outdir, formats, jobs):
    x0 = np.asarray(task.get("x"), dtype=float)
    if task.get("x") is None:
        raise ScenarioError("task.x is required for characteristic")
    t1 = _require_positive(task, "t1")
    nsteps = int(task.get("nsteps", 32))
    sr = task.get("search_radius")
    trace = propagate_singularity(u, model, x0, t1, nsteps, seed=seed,
                                  search_radius=sr)
    files = _emit_table(outdir, "trace", trace.csv_rows(), formats)
    jp = os.path.join(outdir, "trace_summary.json")
    write_json(jp, trace.summary_dict())
    files.append(jp)
    return trace.summary_dict(), files


def run_mountainpass(model, u, task, seed, outdir, formats, jobs):
    x = np.asarray(task.get("x"), dtype=float)
    if task.get("x") is None:
        raise ScenarioError("task.x is required for mountainpass")
    t = _require_positive(task, "t")
    path_nodes = int(task.get("path_nodes", 33))
    iters = int(task.get("iters", 500))
    problem = BarrierProblem.from_point(u, model, x, t, seed=seed)
    mins = global_minimizers(problem)
    results = []
    files = []
    for i in range(len(mins)):
        for j in range(i + 1, len(mins)):
            res = mountain_pass(problem, i, j, path_nodes=path_nodes,
                                iters=iters, seed=seed)
            classify_dichotomy(res, problem, seed=seed)
            results.append(res.to_dict())
            rows = [[f"y{d+1}" for d in range(model.dim)]]
            rows += [list(p) for p in res.path]
            files += _emit_table(outdir, f"path_{i}{j}", rows, formats)
    payload = {
        "minimizers": [{"point": m.point.tolist(),
                        "barrier_value": m.barrier_value,
                        "gap_to_ux": m.gap_to_ux} for m in mins],
        "passes": results,
    }
    jp = os.path.join(outdir, "mountainpass.json")
    write_json(jp, payload)
    files.append(jp)
    return {"n_minimizers": len(mins), "n_passes": len(results)}, files


# -- verify ----------------------------------------------------------------------

def verify_all(entry, seed: int = 0, jobs: int = 1) -> dict:
    """Run every sampled property of the paper-backed suite on one catalog pair."""
    model, u = entry.model, entry.u
    hview = HamiltonianView(model)
    rng = np.random.default_rng(seed)
    props = []

    def add(name, passed, skipped=False, **info):
        props.append({"name": name, "passed": bool(passed),
                      "skipped": bool(skipped),
                      **{k: _plain(v) for k, v in info.items()}})

    def _plain(v):
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, (np.floating, np.integer)):
            return v.item()
        return v

    rep = check_tonelli(model, entry.region, nsamples=400, seed=seed)
    add("tonelli_conditions", rep.passed,
        min_hessian_eig=rep.min_hessian_eig,
        worst_lower_margin=rep.worst_lower_margin)

    sc = semiconcavity_check(u, entry.region, ntriples=200, seed=seed)
    add("semiconcavity", sc.passed, worst_midpoint=sc.worst_midpoint,
        worst_proximal=sc.worst_proximal)

    if entry.level is not None:
        vc = viscosity_check(u, hview, entry.region, nsamples=15,
                             level=entry.level, seed=seed)
        add("viscosity_solution", vc.passed(1e-6),
            sub_defect=vc.max_subsolution_defect,
            super_defect=vc.max_supersolution_defect)
    else:
        add("viscosity_solution", True, skipped=True)

    t0, reports = determine_t0(model, entry.anchor, nsamples=30, seed=seed)
    add("kernel_convexity_t0", t0 is not None, t0=t0,
        min_Q=[r.min_Q for r in reports])

    # endpoint derivative formulas and energy conservation on sampled pairs
    worst_rel = 0.0
    worst_estd = 0.0
    curves = []
    try:
        for _ in range(5):
            lo, hi = entry.region
            xa = rng.uniform(lo, hi)
            ya = rng.uniform(lo, hi)
            ta = float(rng.uniform(0.1, 0.5))
            r = minimize_action(model, xa, ya, ta, restarts=1)
            chk = action_derivatives(model, r)
            worst_rel = max(worst_rel, chk.rel_err_x, chk.rel_err_y, chk.rel_err_t)
            worst_estd = max(worst_estd, r.energy_std / (1.0 + abs(r.energy)))
            curves.append(r.minimizer)
        add("action_derivatives", worst_rel <= 1e-4 and worst_estd <= 1e-5,
            worst_fd_rel=worst_rel, worst_energy_std=worst_estd)
    except HJSError as exc:
        add("action_derivatives", False, error=str(exc))

    el = equi_lipschitz_check(curves)
    add("equi_lipschitz", not el.growth_flag, max_constant=el.max_constant,
        growth_slope=el.growth_slope)

    # closed-form kernel oracle for constant-potential models
    lo, hi = entry.region
    probe = rng.uniform(lo, hi, size=(8, model.dim))
    const_V = model.form == "quadratic_kinetic" or (
        model.form == "mechanical"
        and float(np.max(np.abs(model._V_x(probe)))) < 1e-12)
    if const_V:
        worst = 0.0
        A = model.A
        b = model.drift
        Vc = float(model._V(entry.anchor)) if model.form == "mechanical" else 0.0
        for _ in range(20):
            xa = rng.uniform(lo, hi)
            ya = rng.uniform(lo, hi)
            ta = float(rng.uniform(0.05, 1.0))
            r = minimize_action(model, xa, ya, ta, restarts=1)
            d = ya - xa - b * ta
            exact = float(d @ A @ d) / (2 * ta) - Vc * ta
            worst = max(worst, abs(r.value - exact) / (1.0 + abs(exact)))
        add("kernel_oracle", worst <= 1e-6, worst_rel=worst)
    else:
        add("kernel_oracle", True, skipped=True)

    if entry.p3_model is not None:
        p3_pass = True
        worst_drop = 0.0
        for xa in rng.uniform(lo / 4, hi / 4, size=(3, model.dim)):
            repo = verify_P3(u, entry.p3_model, xa, [0.05, 0.1, 0.2, 0.4],
                             search_radius=entry.search_radius, seed=seed)
            p3_pass &= repo.passed
            if not repo.skipped:
                worst_drop = max(worst_drop, repo.worst_drop)
        add("monotone_in_t", p3_pass, worst_drop=worst_drop)
    else:
        add("monotone_in_t", True, skipped=True)

    if model.A is not None:
        C_eff = max(u.C, 1e-12)
        t5 = min(0.5, float(np.linalg.eigvalsh(model.A)[0]) / C_eff)
        rep5 = verify_P5(u, model.A, C_eff, t5, entry.region, nsamples=3,
                         seed=seed)
        add("critical_point_preservation", rep5.passed,
            point_drift=rep5.max_point_drift, value_drift=rep5.max_value_drift)
    else:
        add("critical_point_preservation", True, skipped=True)

    if entry.p4_ready:
        try:
            gl = gradient_limit_p0(u, model, entry.anchor,
                                   [0.16, 0.08, 0.04, 0.02], seed=seed)
            add("minimal_energy_limit", gl.me_gap <= 1e-2, me_gap=gl.me_gap,
                p_limit=gl.p_limit)
        except HJSError as exc:
            add("minimal_energy_limit", False, error=str(exc))
    else:
        add("minimal_energy_limit", True, skipped=True,
            reason="interior-maximizer hypothesis does not hold")

    trace = propagate_singularity(u, model, entry.anchor, 0.2, 16, seed=seed)
    sing_ok = True
    if trace.noncrit_dist > 10 * trace.sing_tol:
        sing_ok = bool(np.all(trace.singular_flags))
    speed_info = {}
    if model.drift is not None and float(np.linalg.norm(model.drift)) > 0:
        speeds = np.linalg.norm(trace.velocities[1:-1], axis=-1)
        bnorm = float(np.linalg.norm(model.drift))
        speed_ok = bool(np.all(np.abs(speeds - bnorm) <= 0.05 * bnorm))
        sing_ok = sing_ok and speed_ok
        speed_info = {"mean_speed": float(np.mean(speeds)), "drift_norm": bnorm}
    add("singular_propagation",
        sing_ok and float(np.max(trace.inclusion_defects)) <= 1e-2,
        max_defect=float(np.max(trace.inclusion_defects)),
        noncrit=trace.noncrit_dist, **speed_info)

    sd = estimate_superdifferential(u, entry.anchor, seed=seed)
    if len(sd.limiting) >= 2:
        try:
            prob = BarrierProblem.from_point(u, model, entry.anchor, 0.5,
                                             seed=seed)
            mins = global_minimizers(prob)
            res = mountain_pass(prob, 0, 1, seed=seed)
            cls = classify_dichotomy(res, prob, seed=seed)
            ordering = (res.b_value >= max(m.barrier_value for m in mins[:2])
                        - 1e-9 and res.b_value > res.min_barrier + 1e-9)
            gaps_ok = True
            if entry.level == 0.0:
                gaps_ok = all(m.gap_to_ux <= 1e-4 for m in mins)
            add("mountain_pass", ordering and gaps_ok
                and res.certificate_dist <= 1e-3,
                b=res.b_value, certificate=res.certificate_dist,
                classification=cls.kind,
                minimizer_gaps=[m.gap_to_ux for m in mins])
        except HJSError as exc:
            add("mountain_pass", False, error=str(exc))
    else:
        add("mountain_pass", True, skipped=True, reason="anchor not singular")

    if entry.level == 0.0:
        worst_fp = 0.0
        for ta in (0.2, 0.5):
            for xa in rng.uniform(lo / 2, hi / 2, size=(2, model.dim)):
                r = inf_convolve(u, model, xa, ta,
                                 search_radius=entry.search_radius, seed=seed)
                worst_fp = max(worst_fp,
                               abs(r.value + entry.level * ta - float(u(xa))))
        add("weak_kam_fixed_point", worst_fp <= 1e-4, worst_gap=worst_fp)
    else:
        add("weak_kam_fixed_point", True, skipped=True)

    t_reg = min(0.2, t0 if t0 else 0.2)
    lo_s, hi_s = lo / 2, hi / 2
    field = lasry_lions_field(u, model, t_reg, (lo_s, hi_s),
                              resolution=7 if model.dim > 1 else 15,
                              seed=seed, localized=False, jobs=jobs)
    add("c11_regularity", field.c11_ok,
        min_second=field.min_second_diff, max_second=field.max_second_diff)

    return {
        "catalog": entry.name,
        "t0": t0,
        "properties": props,
        "all_passed": all(p["passed"] for p in props),
    }


def run_verify(model, u, task, seed, outdir, formats, jobs):
    name = task.get("catalog")
    if not name:
        raise ScenarioError(
            f"task.catalog is required for verify; one of {catalog_names()}")
    try:
        entry = get_entry(name)
    except KeyError as exc:
        raise ScenarioError(str(exc))
    report = verify_all(entry, seed=seed, jobs=jobs)
    jp = os.path.join(outdir, "verify_report.json")
    write_json(jp, report)
    return report, [jp]


_RUNNERS = {
    "fundamental": run_fundamental,
    "regularize": run_regularize,
    "characteristic": run_characteristic,
    "mountainpass": run_mountainpass,
    "verify": run_verify,
}


# -- driver -----------------------------------------------------------------------

def run(task_name: str, scenario_path: str, overrides=(), jobs: int | None = None,
        seed: int | None = None, outdir: str | None = None) -> int:
    """Execute one task; returns the process exit code."""
    try:
        scenario = load_scenario(scenario_path, overrides)
        task = scenario.get("task", {})
        declared = task.get("name")
        if declared is not None and declared != task_name:
            raise ScenarioError(
                f"scenario declares task {declared!r} but {task_name!r} was invoked")
        if task_name not in TASKS:
            raise ScenarioError(f"unknown task {task_name!r}")
        eff_seed = seed if seed is not None else int(scenario.get("seed", 0))
        out_spec = scenario.get("output", {})
        eff_out = outdir or out_spec.get("directory", "out")
        formats = out_spec.get("formats", ["json", "csv", "dat"])
        bad = set(formats) - {"json", "csv", "dat"}
        if bad:
            raise ScenarioError(f"unknown output formats: {sorted(bad)}")

        if task_name == "verify":
            model = u = None
        else:
            if "model" not in scenario:
                raise ScenarioError("scenario needs a [model] section")
            model = build_model(scenario["model"])
            if "u" in scenario:
                u = build_u(scenario["u"], model.dim)
            elif task_name == "fundamental":
                u = None
            else:
                raise ScenarioError(f"task {task_name!r} needs a [u] section")
        for key in ("t", "t1"):
            if key in task:
                _require_positive(task, key)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    os.makedirs(eff_out, exist_ok=True)
    njobs = jobs if jobs is not None else (os.cpu_count() or 1)
    status = "ok"
    summary = {}
    files = []
    code = 0
    try:
        summary, files = _RUNNERS[task_name](model, u, task, eff_seed, eff_out,
                                             formats, njobs)
        if task_name == "verify" and not summary.get("all_passed", False):
            status = "property-violation"
            code = 4
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except HJSError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        status = f"numerical-failure: {exc}"
        code = 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    with open(scenario_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "scenario_sha256": digest,
        "created_utc": datetime.datetime.now(datetime.timezone.utc)
        .isoformat(timespec="seconds"),
        "task": task_name,
        "seed": eff_seed,
        "status": status,
        "t0": summary.get("t0") if isinstance(summary, dict) else None,
        "outputs": sorted(os.path.relpath(f, eff_out) for f in files),
    }
    write_json(os.path.join(eff_out, "manifest.json"), manifest)
    for f in manifest["outputs"]:
        if not os.path.exists(os.path.join(eff_out, f)):
            print(f"warning: declared output missing: {f}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hjs",
        description="Variational Hamilton-Jacobi toolkit: fundamental "
                    "solutions, Lax-Oleinik convolutions, singular "
                    "characteristics, mountain-pass critical points.")
    sub = parser.add_subparsers(dest="task", required=True)
    for name in TASKS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, help="TOML scenario file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                       dest="overrides", help="override a scenario value")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker count for grid sweeps (default: cores)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)
    return run(args.task, args.scenario, overrides=args.overrides,
               jobs=args.jobs, seed=args.seed, outdir=args.out)


if __name__ == "__main__":
    sys.exit(main())
