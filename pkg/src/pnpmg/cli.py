"""Command line front end.

Exit codes: 0 success, 1 verification verdict not Stable, 2 synthesis
failure or invalid electrical data, 3 input/output problem, 4 divergence.
Errors are written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, model, sim, synthesis
from .model import DguParams, GridSpec
from .synthesis import Route, SynthesisError, SynthesisOptions

EXIT_OK = 0
EXIT_UNSTABLE = 1
EXIT_SYNTHESIS = 2
EXIT_IO = 3
EXIT_DIVERGED = 4

CLI_RECORD_EVERY = 50


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **details):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.details = details


def _emit_error(kind: str, message: str, **details) -> None:
    payload = {"error": kind, "message": message}
    payload.update({k: v for k, v in details.items() if v is not None})
    print(json.dumps(payload, default=str, sort_keys=True), file=sys.stderr)


def _threads() -> int:
    cap = os.environ.get("PNPMG_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise CliError(EXIT_IO, "ConfigError", f"PNPMG_THREADS={cap!r} is not an integer") from None
    return n


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_IO, type(exc).__name__, f"cannot read {path}: {exc}") from None


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _write_json(path: Path, data) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(data, fh, indent=1, sort_keys=True, default=_plain)
            fh.write("\n")
    except OSError as exc:
        raise CliError(EXIT_IO, "OSError", f"cannot write {path}: {exc}") from None


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, "OSError", f"cannot create {out}: {exc}") from None
    return out


def _load_grid(path, sigma_bar=None) -> GridSpec:
    data = _read_json(path)
    try:
        grid = model.grid_from_dict(data)
    except (model.ParameterError, model.TopologyError, model.DegenerateLineError) as exc:
        raise CliError(EXIT_SYNTHESIS, type(exc).__name__, str(exc)) from None
    if sigma_bar is not None:
        grid = dataclasses.replace(grid, sigma_bar=sigma_bar)
    return grid


def _alphas(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad weights {text!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("expected four comma-separated weights")
    return vals


def _synth_options(args, grid: GridSpec | None = None) -> SynthesisOptions:
    kw = {"route": Route(args.route)}
    if getattr(args, "alphas", None) is not None:
        kw["alphas"] = args.alphas
    if getattr(args, "y33_cap", None) is not None:
        kw["y33_cap"] = args.y33_cap
    if getattr(args, "sigma_bar", None) is not None:
        kw["sigma_bar"] = args.sigma_bar
    elif grid is not None:
        kw["sigma_bar"] = grid.sigma_bar
    try:
        return SynthesisOptions(**kw)
    except ValueError as exc:
        raise CliError(EXIT_SYNTHESIS, "OptionError", str(exc)) from None


def _certificate_dict(i: int, cert: synthesis.Certificate) -> dict:
    return {
        "dgu_id": i,
        "valid": cert.valid,
        "failures": list(cert.failures),
        "gamma": np.asarray(cert.gamma).tolist(),
        "beta": cert.beta,
        "zeta": cert.zeta,
        "max_eig_q": cert.max_eig_q,
        "residuals": {k: float(v) for k, v in sorted(cert.residuals.items())},
    }


# --- synth --------------------------------------------------------------------


def cmd_synth(args) -> int:
    grid = _load_grid(args.grid, args.sigma_bar)
    opts = _synth_options(args, grid)
    try:
        result = synthesis.synthesize_all(grid, opts)
    except SynthesisError as exc:
        raise CliError(EXIT_SYNTHESIS, "SynthesisError", str(exc), diagnostics=exc.diagnostics) from None
    out = _out_dir(args.out)
    try:
        synthesis.save_controllers(out / "controllers.json", result)
    except OSError as exc:
        raise CliError(EXIT_IO, "OSError", str(exc)) from None
    certs = [_certificate_dict(i, result[i][1]) for i in sorted(result)]
    _write_json(out / "certificates.json", certs)
    bad = [c["dgu_id"] for c in certs if not c["valid"]]
    if bad:
        raise CliError(EXIT_SYNTHESIS, "InvalidCertificate", f"certificates invalid for DGUs {bad}", dgus=bad)
    return EXIT_OK


# --- verify -------------------------------------------------------------------


def _load_controllers(path) -> dict:
    try:
        return synthesis.load_controllers(path)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_IO, type(exc).__name__, f"cannot read controllers from {path}: {exc}") from None


def verify_report(grid: GridSpec, controllers: dict, n_samples: int = 1000, seed: int = 0) -> tuple[dict, bool]:
    """Stability and invariant-set report; the flag is true iff every check passes."""
    missing = [i for i in grid.ids if i not in controllers]
    if missing:
        raise CliError(EXIT_IO, "MissingController", f"no controller for DGUs {missing}", dgus=missing)
    try:
        rep = analysis.certify_stability(grid, controllers)
    except analysis.AssumptionViolation as exc:
        raise CliError(EXIT_UNSTABLE, "AssumptionViolation", str(exc)) from None
    las = analysis.check_lasalle_sets(grid, controllers, n_samples, np.random.default_rng(seed))
    report = rep.to_dict()
    report["lasalle"] = {
        "residuals": {k: float(v) for k, v in sorted(las.residuals.items())},
        "failures": list(las.failures),
        "f21_opposite_sign": float(las.f21_opposite_sign),
    }
    ok = rep.verdict is analysis.Verdict.STABLE and las.ok
    return report, ok


def cmd_verify(args) -> int:
    grid = _load_grid(args.grid)
    ctrls = _load_controllers(args.controllers)
    report, ok = verify_report(grid, ctrls, seed=args.seed)
    out = _out_dir(args.out)
    _write_json(out / "stability_report.json", report)
    if not ok:
        failures = report["lasalle"]["failures"] + [f"DGU {k}: {v}" for k, v in report["local_failures"].items()]
        raise CliError(EXIT_UNSTABLE, "NotStable", f"verdict {report['verdict']}", failures=failures)
    return EXIT_OK


# --- simulate / benchmark -----------------------------------------------------


def _benchmark_config(args) -> sim.BenchmarkConfig:
    kw = {"record_every": args.record_every, "synthesis": _synth_options(args)}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.sigma_bar is not None:
        kw["sigma_bar"] = args.sigma_bar
    return sim.BenchmarkConfig(**kw)


def _scenario_from_args(args) -> sim.Scenario:
    if args.benchmark or args.clock_drift:
        cfg = _benchmark_config(args)
        sc = sim.clock_drift_scenario(cfg) if args.clock_drift else sim.benchmark_scenario(cfg)
    elif args.scenario:
        try:
            sc = sim.scenario_from_dict(_read_json(args.scenario), _synth_options(args))
        except (sim.ScenarioError, model.ParameterError, model.TopologyError) as exc:
            raise CliError(EXIT_IO, type(exc).__name__, str(exc)) from None
        sc = dataclasses.replace(sc, record_every=args.record_every)
    else:
        raise CliError(EXIT_IO, "UsageError", "one of --scenario, --benchmark, --clock-drift is required")
    if args.t_end is not None:
        sc = dataclasses.replace(sc, t_end=args.t_end)
    if args.step_us is not None:
        sc = dataclasses.replace(sc, step_s=args.step_us * 1e-6)
    return sc


def _write_trajectory(out: Path, traj: sim.Trajectory, omega0: float) -> dict:
    sim.write_trajectory_csv(out / "trajectory.csv", traj)
    metrics = sim.compute_metrics(traj, omega0).to_dict()
    metrics["events"] = [{"time": t, "label": lab} for t, lab in traj.events]
    metrics["n_samples"] = int(len(traj.times))
    _write_json(out / "metrics.json", metrics)
    return metrics


def _run(sc: sim.Scenario, out: Path) -> dict:
    try:
        traj = sim.simulate(sc)
    except sim.DivergenceError as exc:
        _write_trajectory(out, exc.trajectory, sc.grid0.omega0)
        raise CliError(EXIT_DIVERGED, "DivergenceError", str(exc), time=exc.time) from None
    except sim.ScenarioError as exc:
        raise CliError(EXIT_IO, "ScenarioError", str(exc)) from None
    return _write_trajectory(out, traj, sc.grid0.omega0)


def cmd_simulate(args) -> int:
    sc = _scenario_from_args(args)
    out = _out_dir(args.out)
    _write_json(out / "scenario.json", sim.scenario_to_dict(sc))
    _run(sc, out)
    return EXIT_OK


def _topologies(sc: sim.Scenario) -> list[tuple[float, GridSpec]]:
    """Grid after each topology-changing event time."""
    grid = sc.grid0
    stages = [(0.0, grid)]
    for ev in sc.events:
        if isinstance(ev, sim.PlugIn):
            grid = model.mutate_topology(grid, model.PlugIn(ev.dgu, ev.lines))
        elif isinstance(ev, sim.PlugOut):
            grid = model.mutate_topology(grid, model.PlugOut(ev.dgu))
        elif isinstance(ev, sim.LineTrip):
            grid = model.mutate_topology(grid, model.LineTrip(ev.a, ev.b))
        elif isinstance(ev, sim.LineAdd):
            grid = model.mutate_topology(grid, model.LineAdd(ev.line))
        else:
            continue
        if stages[-1][0] == ev.time:
            stages[-1] = (ev.time, grid)
        else:
            stages.append((ev.time, grid))
    return stages


def cmd_benchmark(args) -> int:
    """Synthesize, certify every topology of the benchmark, then simulate it."""
    args.benchmark = not args.clock_drift
    sc = _scenario_from_args(args)
    out = _out_dir(args.out)
    ctrls = dict(sc.controllers)
    for ev in sc.events:
        if isinstance(ev, sim.PlugIn) and ev.controller is not None:
            ctrls[ev.dgu.id] = ev.controller
    synthesis.save_controllers(out / "controllers.json", ctrls)
    stages, all_ok = [], True
    for t, grid in _topologies(sc):
        rep, ok = verify_report(grid, ctrls, n_samples=100, seed=args.seed or 0)
        all_ok &= ok
        stages.append({"time": t, "ids": grid.ids, "lines": [list(ln.key) for ln in grid.lines], "report": rep})
    _write_json(out / "stability_report.json", stages)
    _write_json(out / "scenario.json", sim.scenario_to_dict(sc))
    metrics = _run(sc, out)
    summary = {
        "stable_all_stages": bool(all_ok),
        "windows": [
            {
                "start": w["start"],
                "label": w["label"],
                "max_recovery_time_s": _max_finite(w["recovery_time_s"]),
                "max_steady_state_error_pu": _max_finite(w["steady_state_error_pu"]),
            }
            for w in metrics["windows"]
        ],
    }
    _write_json(out / "summary.json", summary)
    if not all_ok:
        raise CliError(EXIT_UNSTABLE, "NotStable", "a benchmark topology is not certified stable")
    return EXIT_OK


def _max_finite(d: dict):
    vals = [v for v in d.values() if v is not None]
    return max(vals) if vals else None


# --- sweep --------------------------------------------------------------------

DGU_COLUMNS = ("sample", "sigma_bar", "route", "r_t", "l_t", "c_t", "feasible", "max_eig_q_rel", "max_re", "error")
GRID_COLUMNS = ("sample", "n_dgus", "n_lines", "sigma_bar", "route", "feasible", "max_eig_q_rel", "max_re", "verdict", "error")


def _dgu_sample(task) -> dict:
    k, sb, route, r_t, l_t, c_t = task
    row = {"sample": k, "sigma_bar": sb, "route": route, "r_t": r_t, "l_t": l_t, "c_t": c_t}
    try:
        ctrl, cert = synthesis.synthesize(DguParams(k, r_t, l_t, c_t), SynthesisOptions(sigma_bar=sb, route=Route(route)))
    except (SynthesisError, model.ParameterError) as exc:
        return {**row, "feasible": False, "max_eig_q_rel": "", "max_re": "", "error": str(exc)}
    nq = float(np.linalg.norm(cert.q))
    return {
        **row,
        "feasible": cert.valid,
        "max_eig_q_rel": cert.max_eig_q / nq if nq > 0 else cert.max_eig_q,
        "max_re": float(cert.residuals["max_re_eig_f"]),
        "error": ";".join(cert.failures),
    }


def _grid_sample(task) -> dict:
    k, sb, route, grid_dict = task
    grid = model.grid_from_dict(grid_dict)
    row = {"sample": k, "n_dgus": grid.n, "n_lines": len(grid.lines), "sigma_bar": sb, "route": route}
    try:
        res = synthesis.synthesize_all(grid, SynthesisOptions(route=Route(route)))
        rep = analysis.certify_stability(grid, {i: c for i, (c, _) in res.items()})
    except (SynthesisError, analysis.AssumptionViolation) as exc:
        return {**row, "feasible": False, "max_eig_q_rel": "", "max_re": "", "verdict": "", "error": str(exc)}
    return {
        **row,
        "feasible": True,
        "max_eig_q_rel": rep.residuals["q_max_eig_rel"],
        "max_re": rep.max_re,
        "verdict": rep.verdict.value,
        "error": "",
    }


def sweep_tasks(spec: dict, seed: int | None = None) -> tuple[str, list]:
    """Expand a sweep description into deterministic per-sample tasks."""
    kind = spec.get("kind", "dgu")
    rng = np.random.default_rng(spec.get("seed", 0) if seed is None else seed)
    n = int(spec.get("n_samples", 0))
    sbs = [float(v) for v in spec.get("sigma_bar", [1e4])]
    routes = [Route(r).value for r in spec.get("routes", ["lmi", "analytic"])]
    tasks = []
    if kind == "dgu":
        r_t, l_t, c_t = spec.get("r_t", [0.01, 1.0]), spec.get("l_t", [1e-4, 1e-2]), spec.get("c_t", [1e-6, 1e-4])
        for k in range(n):
            p = (float(rng.uniform(*r_t)), float(rng.uniform(*l_t)), float(rng.uniform(*c_t)))
            tasks += [(k, sb, route, *p) for sb in sbs for route in routes]
    elif kind == "grid":
        lo, hi = spec.get("n_dgus", [2, 20])
        for k in range(n):
            sb = sbs[k % len(sbs)] if sbs else 1e4
            g = model.random_connected_grid(
                rng,
                int(rng.integers(lo, hi + 1)),
                line_r=tuple(spec.get("line_r", (0.05, 0.8))),
                line_l=tuple(spec.get("line_l", (2e-6, 40e-6))),
                sigma_bar=sb,
            )
            tasks += [(k, sb, route, model.grid_to_dict(g)) for route in routes] if sbs else []
    else:
        raise CliError(EXIT_IO, "SweepError", f"unknown sweep kind {kind!r}")
    return kind, tasks


def run_sweep(spec: dict, seed: int | None = None, workers: int = 1) -> tuple[tuple[str, ...], list[dict]]:
    kind, tasks = sweep_tasks(spec, seed)
    fn, cols = (_dgu_sample, DGU_COLUMNS) if kind == "dgu" else (_grid_sample, GRID_COLUMNS)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(fn, tasks))
    else:
        rows = [fn(t) for t in tasks]
    return cols, rows


def cmd_sweep(args) -> int:
    spec = _read_json(args.spec)
    cols, rows = run_sweep(spec, args.seed, _threads())
    out = _out_dir(args.out)
    try:
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    except OSError as exc:
        raise CliError(EXIT_IO, "OSError", str(exc)) from None
    return EXIT_OK


# --- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pnpmg", description="Plug-and-play microgrid controller toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def synth_flags(sp):
        sp.add_argument("--sigma-bar", type=float, default=None)
        sp.add_argument("--alphas", type=_alphas, default=None, help="four cost weights a1,a2,a3,a4")
        sp.add_argument("--route", choices=[r.value for r in Route], default=Route.LMI.value)
        sp.add_argument("--y33-cap", type=float, default=None)

    def sim_flags(sp):
        sp.add_argument("--step-us", type=float, default=None)
        sp.add_argument("--t-end", type=float, default=None)
        sp.add_argument("--record-every", type=int, default=CLI_RECORD_EVERY)
        sp.add_argument("--clock-drift", action="store_true")

    sp = sub.add_parser("synth", help="synthesize one controller per DGU")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--out", default=".")
    sp.add_argument("--seed", type=int, default=0)
    synth_flags(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("verify", help="certify global stability")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--controllers", required=True)
    sp.add_argument("--out", default=".")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("simulate", help="run a scenario")
    sp.add_argument("--scenario")
    sp.add_argument("--benchmark", action="store_true")
    sp.add_argument("--out", default=".")
    sp.add_argument("--seed", type=int, default=None)
    synth_flags(sp)
    sim_flags(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("benchmark", help="certify and simulate the 10-DGU benchmark")
    sp.add_argument("--out", default=".")
    sp.add_argument("--seed", type=int, default=None)
    synth_flags(sp)
    sim_flags(sp)
    sp.set_defaults(func=cmd_benchmark, scenario=None)

    sp = sub.add_parser("sweep", help="feasibility or stability sweep")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out", default=".")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _emit_error(exc.kind, str(exc), **exc.details)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
