"""Command line front end.

Exit status: 0 success, 2 invalid configuration, 3 numerical failure
(divergence, scheme or quadrature error), 1 anything unexpected.  Every
failure is also printed to stderr as one JSON object.
"""
import argparse
import json
import os
import sys
import time
import warnings
from contextlib import contextmanager
from dataclasses import replace

import numpy as np

from . import __version__
from . import config as C
from .diagnostics import CompactnessConfig, decompose_terms, energy_ledger, plain_compactness
from .errors import (ConfigError, DivergenceError, DomainError, LadderError, QuadratureError, ResolutionError,
                     SchemeError, StepSizeError, UsageError)
from .fields import write_field_binary
from .grid import PeriodicGrid
from .kernels import build_compactness_kernel, build_mollifier
from .pressure import SamplingPlan, check_hypotheses
from .solver import SimParams, Solver, cascade_run
from .trajectory import load_trajectory, save_trajectory, timestamped_dir, write_manifest
from .weights import WeightEvolver, WeightState, weight_monitors

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
CONFIG_ERRORS = (ConfigError, LadderError, UsageError, ResolutionError, DomainError)
NUMERIC_ERRORS = (DivergenceError, SchemeError, QuadratureError, StepSizeError)

DIAGNOSE_COLUMNS = [
    "t", "h0", "resolved", "stride", "T", "I1", "I2", "I3", "I4", "I5", "D1", "D2", "D3",
    "I1_int", "I2_int", "I3_int", "I4_int", "I5_int", "D1_int", "D2_int", "D3_int", "gronwall_residual",
    "plain", "kinetic", "ladder_energy", "dissipation", "pressure_work", "energy_residual",
    "rho_log_w", "rho_low_weight", "lambda_pen", "outside_scope",
]


def threads():
    raw = os.environ.get("HNS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError([f"HNS_THREADS must be a positive integer, got {raw!r}"]) from None
    if n < 1:
        raise ConfigError([f"HNS_THREADS must be a positive integer, got {raw!r}"])
    return n


def error_payload(exc, code):
    out = {"status": code, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, (ConfigError, LadderError)):
        out["violations"] = exc.violations
    if isinstance(exc, DivergenceError):
        out["t"] = exc.t
        out["blame"] = exc.blame
    if isinstance(exc, StepSizeError):
        out["dt"], out["dt_max"] = exc.dt, exc.dt_max
    return out


@contextmanager
def _captured():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        yield caught


def _csv(path, header, rows):
    np.savetxt(path, np.asarray(rows, dtype=float).reshape(-1, len(header)), delimiter=",",
               header=",".join(header), comments="", fmt="%.17g")


def _params(cfg, law, ladder):
    return SimParams(law, ladder, C.eps_of(cfg), cfg["mollifier"]["kind"], cfl=cfg["time"]["cfl"],
                     regularize_initial=cfg["mollifier"]["regularize_initial"])


def _p_tilde_warning(law):
    if not law.declares_p_tilde and not law.homogeneous:
        return "pressure law declares no P~; using P~ = 0 so Q carries all heterogeneity"
    return None


# -- subcommands ---------------------------------------------------------------------

def run_simulate(cfg, out_root, dump_weights=False):
    start = time.perf_counter()
    with _captured() as caught:
        grid = C.make_grid(cfg)
        law = C.make_law(cfg)
    ladder = C.make_ladder(cfg)
    solver = Solver(grid, _params(cfg, law, ladder))
    rho0, u0 = C.initial_fields(cfg, grid)
    state = solver.initial_state(rho0, u0)
    w = cfg["weights"]
    evolver = None
    if w["enabled"] or dump_weights:
        evolver = WeightEvolver(law, w["lambda_pen"], w["l_exp"], C.weight_h(cfg), w["pen_gamma"] or None,
                                cfg["diagnostics"]["a"], solver)
    dt = cfg["time"]["dt"] or None
    traj = solver.run(state, cfg["time"]["t_end"], dt=dt, output_times=C.output_times(cfg), weights=evolver)
    out = timestamped_dir(out_root, "simulate")
    led = energy_ledger(traj)
    _csv(os.path.join(out, "energy.csv"),
         ["t", "kinetic", "ladder", "reduced_potential", "dissipation", "pressure_work", "residual"], led.rows())
    notes = [str(c.message) for c in caught] + [m for m in [_p_tilde_warning(law)] if m]
    manifest = save_trajectory(out, traj, cfg, dump_weights=dump_weights, wall_clock=time.perf_counter() - start,
                               extra_files=["energy.csv"])
    manifest.update({"warnings": notes, "mass_drift": traj.mass_drift(), "outside_scope": grid.outside_scope})
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return {"status": EXIT_OK, "dir": out, "steps": traj.steps, "warnings": notes}


def run_cascade(cfg, out_root):
    start = time.perf_counter()
    grid = C.make_grid(cfg)
    law = C.make_law(cfg)
    ladder = C.make_ladder(cfg)
    rho0, u0 = C.initial_fields(cfg, grid)
    ca = cfg["cascade"]
    rep = cascade_run(grid, law, ladder, rho0, u0, cfg["time"]["t_end"], ca["eps_ladder"], ca["eta_ladders"],
                      p=ca["p"], dt=cfg["time"]["dt"] or None, h0_ladder=tuple(ca["h0"]), cfl=cfg["time"]["cfl"],
                      a=cfg["diagnostics"]["a"], workers=threads())
    out = timestamped_dir(out_root, "cascade")
    files = []
    runs = []
    for k, run in enumerate(rep.eps_runs + rep.eta_runs):
        entry = {"label": run.label, "eps": run.eps, "etas": list(run.etas), "mass_drift": run.mass_drift,
                 "ladder_energy": run.ladder_energy, "error": run.error}
        if run.final_rho is not None:
            sub = f"point_{k:03d}"
            os.makedirs(os.path.join(out, sub))
            name = f"{sub}/final_rho.bin"
            write_field_binary(os.path.join(out, name), grid, run.final_rho)
            files.append(name)
            entry["final_rho"] = name
        runs.append(entry)
    comp = rep.compactness
    report = {
        "runs": runs,
        "p": rep.p,
        "eps_l1": rep.eps_l1, "eps_lp": rep.eps_lp, "eta_l1": rep.eta_l1, "eta_lp": rep.eta_lp,
        "eps_distances_decreasing": rep.eps_distances_decreasing(),
        "ladder_energy_trend": [rep.ladder_energy_trend(i) for i in range(len(ca["eta_ladders"]))],
        "compactness": {"h0": comp.h0, "values": comp.values.tolist(), "stride": comp.stride,
                        "resolved": comp.resolved, "p": comp.p} if comp else {},
    }
    with open(os.path.join(out, "cascade.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    files.append("cascade.json")
    write_manifest(out, files, cfg, {"outside_scope": grid.outside_scope}, time.perf_counter() - start)
    return {"status": EXIT_OK, "dir": out, "errors": [r["label"] for r in runs if r["error"]]}


def run_diagnose(traj_dir, cfg, out_root):
    start = time.perf_counter()
    traj, manifest = load_trajectory(traj_dir)
    phys, bad = C.merge(manifest.get("config") or {})
    if bad:
        raise ConfigError(bad)
    law = C.make_law(phys)
    ladder = C.make_ladder(phys)
    grid = traj.grid
    params = _params(phys, law, ladder)
    traj.params = params
    solver = Solver(grid, params)
    dg, w = cfg["diagnostics"], cfg["weights"]
    if traj.weights:
        weights, lam = traj.weights, traj.weights[0].lambda_pen
        h_w = traj.weights[0].h_w
    else:
        # without stored weights the only exact weight is w = 1, i.e. lambda = 0
        lam, h_w = 0.0, C.weight_h(cfg)
        weights = [WeightState(np.ones(grid.shape), s.t, 0.0, w["l_exp"], h_w) for s in traj.snapshots]
    led = energy_ledger(traj, law, ladder)
    monitors = [weight_monitors(ws, s, w["eta_thr"], h_w, dg["a"]) for ws, s in zip(weights, traj.snapshots)]
    p = dg["p"] or 1 + w["l_exp"]

    def per_h0(h0):
        cc = CompactnessConfig(h0, dg["a"], dg["ladder_size"], w["l_exp"], lam, dg["subsample"] or None, p)
        rep = decompose_terms(traj.snapshots, weights, cc, law, ladder, solver, h_w, w["pen_gamma"] or None)
        plain = plain_compactness([s.rho for s in traj.snapshots], p, [h0], dg["a"], dg["ladder_size"], dg["subsample"] or None)
        return rep, plain

    workers = threads()
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(per_h0, dg["h0"]))
    else:
        results = [per_h0(h) for h in dg["h0"]]

    rows = []
    for k, s in enumerate(traj.snapshots):
        for h0, (rep, plain) in zip(dg["h0"], results):
            r = [s.t, h0, float(plain.resolved[0]), rep.stride, rep.T[k]]
            r += [rep.rates[n][k] for n in ("I1", "I2", "I3", "I4", "I5", "D1", "D2", "D3")]
            r += [rep.integrated[n][k] for n in ("I1", "I2", "I3", "I4", "I5", "D1", "D2", "D3")]
            r += [rep.gronwall_residual[k], plain.values[0, k], led.kinetic[k], led.ladder[k], led.dissipation[k],
                  led.pressure_source[k], led.residual[k], monitors[k]["rho_log_w"], monitors[k]["rho_low_weight"],
                  lam, float(grid.outside_scope)]
            rows.append(r)
    out = timestamped_dir(out_root, "diagnose")
    _csv(os.path.join(out, "diagnostics.csv"), DIAGNOSE_COLUMNS, rows)
    write_manifest(out, ["diagnostics.csv"], cfg, {"trajectory": os.path.abspath(traj_dir),
                                                   "columns": DIAGNOSE_COLUMNS}, time.perf_counter() - start)
    return {"status": EXIT_OK, "dir": out, "rows": len(rows)}


def sampling_plan(cfg):
    ch, d = cfg["check"], cfg["grid"]["d"]
    plan = SamplingPlan.regular(d, ch["n_t"], ch["n_x"], ch["n_s"], (ch["s_min"], cfg["pressure"]["s_max"]),
                                (0.0, cfg["time"]["t_end"]), PeriodicGrid(d, ch["grid_n"], cfg["grid"]["backend"]),
                                ch["h_ladder"])
    if ch["n_random"]:
        rng = np.random.default_rng(cfg["seed"])
        plan = replace(plan, points=np.concatenate([plan.points, rng.random((ch["n_random"], d))]))
    return plan


def run_check_pressure(cfg, out_root):
    start = time.perf_counter()
    with _captured() as caught:
        law = C.make_law(cfg)
    report = check_hypotheses(law, sampling_plan(cfg)).to_dict()
    notes = [str(c.message) for c in caught] + [m for m in [_p_tilde_warning(law)] if m]
    report.update({"law": law.name, "gamma": law.gamma, "exponent_violations": law.exponent_violations(),
                   "warnings": notes})
    out = timestamped_dir(out_root, "check-pressure")
    with open(os.path.join(out, "hypotheses.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    write_manifest(out, ["hypotheses.json"], cfg, {}, time.perf_counter() - start)
    return {"status": EXIT_OK, "dir": out, "constants": report["constants"]}


def run_kernel_table(cfg, out_root):
    start = time.perf_counter()
    grid = C.make_grid(cfg)
    kt, dg = cfg["kernel_table"], cfg["diagnostics"]
    K = build_compactness_kernel(grid, kt["h0"], dg["a"], dg["ladder_size"])
    moll = build_mollifier(grid, kt["eps"], cfg["mollifier"]["kind"]) if kt["eps"] else None
    axes = ["x", "y"][:grid.d]
    header = axes + ["r", "aggregate"] + [f"K_{j}" for j in range(K.ladder_size)] + (["mollifier"] if moll else [])
    cols = [o.ravel() for o in grid.offsets] + [grid.radius.ravel(), K.aggregate.ravel()]
    cols += [K.tables[j].ravel() for j in range(K.ladder_size)]
    if moll:
        cols.append(moll.table.ravel())
    out = timestamped_dir(out_root, "kernel-table")
    _csv(os.path.join(out, "kernel_table.csv"), header, np.column_stack(cols))
    spec_ratio, an_ratio = K.gradient_ratio("spectral"), K.gradient_ratio("analytic")
    norms = [[j, h, lw, float(np.sum(K.tables[j]) * grid.weight), sr, ar]
             for j, (h, lw, sr, ar) in enumerate(zip(K.h_ladder, K.log_weights, spec_ratio, an_ratio))]
    _csv(os.path.join(out, "kernel_norms.csv"),
         ["rung", "h", "log_weight", "l1_norm", "grad_ratio_spectral", "grad_ratio_analytic"], norms)
    extra = {"aggregate_norm": K.aggregate_norm, "log_h0": abs(float(np.log(kt["h0"])))}
    if moll:
        extra["mollifier_mass"] = moll.mass
    write_manifest(out, ["kernel_table.csv", "kernel_norms.csv"], cfg, extra, time.perf_counter() - start)
    return {"status": EXIT_OK, "dir": out, **extra}


# -- entry point ----------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="hetns", description="Heterogeneous-pressure Navier-Stokes toolkit.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--print-defaults", action="store_true", help="print the default configuration and exit")
    sub = ap.add_subparsers(dest="command")
    for name, helptext in [("simulate", "run the regularized flow and store a trajectory"),
                           ("cascade", "run the eps and eta ladders and compare consecutive runs"),
                           ("diagnose", "weighted compactness and energy diagnostics of a stored trajectory"),
                           ("check-pressure", "empirical constants of the pressure hypotheses"),
                           ("kernel-table", "dump compactness kernel values and norms")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="TOML run configuration (defaults when omitted)")
        p.add_argument("--out", default="runs", help="root of the timestamped artifact directories")
        if name == "simulate":
            p.add_argument("--dump-weights", action="store_true", help="evolve and store weight snapshots")
        if name == "diagnose":
            p.add_argument("--traj", required=True, help="trajectory directory written by simulate")
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.print_defaults:
        print(C.print_defaults())
        return EXIT_OK
    if args.command is None:
        ap.print_help(sys.stderr)
        return EXIT_CONFIG
    try:
        os.makedirs(args.out, exist_ok=True)
        cfg = C.load(args.config) if args.config else C.loads("")
        if args.command == "simulate":
            result = run_simulate(cfg, args.out, args.dump_weights)
        elif args.command == "cascade":
            result = run_cascade(cfg, args.out)
        elif args.command == "diagnose":
            result = run_diagnose(args.traj, cfg, args.out)
        elif args.command == "check-pressure":
            result = run_check_pressure(cfg, args.out)
        else:
            result = run_kernel_table(cfg, args.out)
    except Exception as exc:  # noqa: BLE001  reported as JSON, not a traceback
        code = EXIT_CONFIG if isinstance(exc, CONFIG_ERRORS) else EXIT_NUMERIC if isinstance(exc, NUMERIC_ERRORS) \
            else EXIT_OTHER
        payload = error_payload(exc, code)
        text = json.dumps(payload, default=str)
        print(text, file=sys.stderr)
        if os.path.isdir(args.out):
            stamp = time.strftime("%Y%m%d-%H%M%S")
            with open(os.path.join(args.out, f"error-{args.command}-{stamp}.json"), "w") as fh:
                fh.write(text + "\n")
        return code
    print(json.dumps(result, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
