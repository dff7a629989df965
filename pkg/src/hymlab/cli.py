"""Configuration-driven experiment runner.

    hymlab <subcommand> --config cfg.toml [--out DIR] [--threads N]
                        [--strict] [--seed N]

Subcommands: check-geometry, chern, flow, perturbed, approx-flat, segre,
nef-cert.  Outputs land in the --out directory: summary.json (top-level
keys: geometry, chern, flow, pipeline, projectivization, errors),
trace.csv for flow-type runs, checkpoints/*.bin.  Exit code 0 on success,
2 on configuration errors, 1 on runtime failures; failures also emit a
structured JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bundle as bd
from . import chern_weil as cw
from . import config as cfgmod
from . import fields_io
from . import flows as fl
from . import geometry as gm
from . import hermitian as hm
from . import projectivization as pj
from .config import ConfigError, ExperimentConfig


def _fresh_summary():
    return {"geometry": None, "chern": None, "flow": None, "pipeline": None,
            "projectivization": None, "errors": []}


def _write_summary(outdir, summary):
    path = os.path.join(outdir, "summary.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def _geometry_report(geom, cfg):
    rho1, rho2 = gm.gauduchon_residual(geom)
    report = {
        "grid": list(geom.grid_shape),
        "periods": list(geom.periods),
        "volume": geom.volume,
        "min_metric_eigenvalue": geom.min_metric_eigenvalue,
        "gauduchon_rho1": rho1,
        "gauduchon_rho2": rho2,
        "kahler_residual": gm.kahler_residual(geom),
        "is_flat": geom.is_flat,
    }
    if cfg.geometry.get("correct", False):
        corrected, factor, history = gm.gauduchon_correct(geom)
        c1, c2 = gm.gauduchon_residual(corrected)
        report["corrected"] = {
            "rho1": c1, "rho2": c2,
            "factor_min": float(np.min(factor)),
            "factor_max": float(np.max(factor)),
            "iterations": len(history),
            "residual_history": [float(h) for h in history],
        }
    return report


def _chern_report(cfg, geom, spec, H):
    rep = cw.chern_numbers(spec, H, strict=cfg.strict)
    bog = cw.bogomolov_quantity(spec, H, strict=cfg.strict)
    ident = cw.energy_identity(spec, H, strict=cfg.strict)
    out = rep.to_dict()
    out["bogomolov_record"] = bog.to_dict()
    out["energy_identity"] = ident.to_dict()
    out["cycle_pairings"] = list(cw.cycle_pairings(spec, H))
    out["integrability_residual"] = bd.integrability_residual(spec)
    return out


def _checkpoint_writer(outdir, geom):
    ckdir = os.path.join(outdir, "checkpoints")
    os.makedirs(ckdir, exist_ok=True)

    def write(step, t, dt, H):
        meta = {"t": t, "step": step, "dt": dt,
                "grid_shape": list(geom.grid_shape)}
        fields_io.write_field(os.path.join(ckdir, f"step_{step:08d}.bin"), H, meta)

    return write


def cmd_check_geometry(cfg, outdir, summary):
    geom = cfgmod.build_geometry(cfg)
    summary["geometry"] = _geometry_report(geom, cfg)


def cmd_chern(cfg, outdir, summary):
    geom = cfgmod.build_geometry(cfg)
    spec = cfgmod.build_bundle(cfg, geom)
    H = cfgmod.build_metric(cfg, spec)
    summary["geometry"] = _geometry_report(geom, cfg)
    summary["chern"] = _chern_report(cfg, geom, spec, H)


def cmd_flow(cfg, outdir, summary, resume=None):
    geom = cfgmod.build_geometry(cfg)
    spec = cfgmod.build_bundle(cfg, geom)
    H0 = cfgmod.build_metric(cfg, spec)
    opts = cfgmod.build_flow_options(cfg)
    if cfg.output.get("checkpoint_stride", 0) or opts.checkpoint_stride:
        opts.checkpoint_stride = int(cfg.output.get("checkpoint_stride",
                                                    opts.checkpoint_stride))
        opts.checkpoint_writer = _checkpoint_writer(outdir, geom)
    lam = cw.lambda_of(spec, strict=cfg.strict)
    start = {}
    if resume:
        H0, meta = fields_io.read_field(resume)
        start = {"start_t": float(meta["t"]), "start_step": int(meta["step"])}
        opts.dt = float(meta.get("dt", opts.dt))
    trace = fl.hym_flow(spec, H0, lam=lam, opts=opts, **start)
    with open(os.path.join(outdir, "trace.csv"), "w") as fh:
        trace.write_csv(fh)
    summary["flow"] = {
        "lambda": lam,
        "steps": trace.steps,
        "t_final": trace.final_t,
        "ym_first": trace.ym_first,
        "ym_last": trace.ym_last,
        "sup_f_final": trace.rows[-1][4],
        "he_residual_final": trace.rows[-1][5],
        "dt_final": trace.dt_final,
        "dt_halvings": trace.dt_halvings,
        "plateau_reached": trace.plateau_reached,
        "energy_identity_error": (trace.energy_identity_error()
                                  if opts.track_dissipation else None),
    }
    fields_io.write_field(os.path.join(outdir, "final_metric.bin"),
                          trace.final_H,
                          {"t": trace.final_t, "step": trace.steps,
                           "dt": trace.dt_final,
                           "grid_shape": list(geom.grid_shape)})


def cmd_perturbed(cfg, outdir, summary, eps=None):
    geom = cfgmod.build_geometry(cfg)
    spec = cfgmod.build_bundle(cfg, geom)
    H = cfgmod.build_metric(cfg, spec)
    if eps is None:
        eps = float(cfg.flow.get("eps", 1.0))
    lam = cw.lambda_of(spec, strict=cfg.strict)
    K, phi = hm.trace_normalize(spec, H, lam)
    opts = cfgmod.build_flow_options(cfg, t_end=float("inf"))
    if opts.dt_growth == 1.0:
        opts.dt_growth = 1.05
    tol = float(cfg.flow.get("solver_tol", 1e-6))
    H_eps, trace = fl.perturbed_solve(spec, K, eps, opts=opts, tol=tol)
    curv = hm.curvature(spec, H_eps)
    he = float(np.max(hm.endo_norm_field(fl._sub_lam(curv.mean, lam), H_eps)))
    with open(os.path.join(outdir, "trace.csv"), "w") as fh:
        trace.write_csv(fh)
    ckdir = os.path.join(outdir, "checkpoints")
    os.makedirs(ckdir, exist_ok=True)
    fields_io.write_field(os.path.join(ckdir, f"h_eps_{eps:g}.bin"), H_eps,
                          {"eps": eps, "grid_shape": list(geom.grid_shape)})
    summary["flow"] = {
        "eps": eps, "lambda": lam, "steps": trace.steps,
        "residual_tol": tol, "he_residual": he,
        "trace_normalization_sup": float(np.max(np.abs(phi))),
    }


def cmd_approx_flat(cfg, outdir, summary):
    geom = cfgmod.build_geometry(cfg)
    spec = cfgmod.build_bundle(cfg, geom)
    H = cfgmod.build_metric(cfg, spec)
    sched = cfgmod.eps_schedule(cfg)
    flow_opts = cfgmod.build_flow_options(
        cfg,
        dt=float(cfg.flow.get("pipeline_dt", 0.04)),
        t_end=float(cfg.flow.get("pipeline_t_end", 16.0)),
        sample_stride=int(cfg.flow.get("sample_stride", 20)),
        stop_on_plateau=True)
    solve_opts = cfgmod.build_flow_options(
        cfg, dt=float(cfg.flow.get("dt", 0.05)), t_end=float("inf"),
        max_steps=int(cfg.flow.get("max_steps", 60000)),
        sample_stride=25, dt_growth=1.05)
    stage_traces = []

    def collect(eps, solve_trace, flow_trace):
        stage_traces.append(flow_trace)

    report = fl.approx_flat_pipeline(
        spec, eps_schedule=sched, flow_opts=flow_opts, solve_opts=solve_opts,
        initial_metric=H, target_ratio=float(cfg.flow.get("target_ratio", 0.1)),
        callbacks=[collect])
    with open(os.path.join(outdir, "trace.csv"), "w") as fh:
        fh.write("# schema=1 hymlab flow trace\n")
        fh.write(",".join(fl.TRACE_COLUMNS) + "\n")
        for tr in stage_traces:
            for r in tr.rows:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                  for v in r) + "\n")
    summary["pipeline"] = report.to_dict()
    summary["chern"] = report.chern
    if report.errors:
        summary["errors"].extend(report.errors)


def cmd_segre(cfg, outdir, summary):
    geom = cfgmod.build_geometry(cfg)
    spec = cfgmod.build_bundle(cfg, geom)
    H = cfgmod.build_metric(cfg, spec)
    res = int(cfg.projectivization.get("fiber_res", 64))
    chunk = int(cfg.projectivization.get("chunk", 64))
    grid = pj.build_fibered_grid(spec, H, fiber_res=res, chunk=chunk)
    checks = {f"k{k}": v for k, v in pj.segre_checks(grid).items()}
    x = geom.coords
    psi = 0.3 * np.sin(2 * np.pi * x[0] / geom.periods[0])
    invariance = pj.oe1_metric_change_invariance(grid, psi)
    summary["projectivization"] = {
        "fiber_res": res,
        "fiber_volume": grid.fiber_volume,
        "segre_checks": checks,
        "oe1_invariance": invariance,
    }


def cmd_nef_cert(cfg, outdir, summary, eps_list=None, metric_checkpoint=None):
    geom = cfgmod.build_geometry(cfg)
    spec = cfgmod.build_bundle(cfg, geom)
    if eps_list is None:
        eps_list = [float(e) for e in cfg.flow.get("nef_eps", [0.0, 0.01, 0.1])]
    if metric_checkpoint:
        H, _ = fields_io.read_field(metric_checkpoint)
    else:
        H = cfgmod.build_metric(cfg, spec)
    entries = []
    harmonic = None
    if spec.rank == 1:
        deg = cw.degree(spec, H, strict=cfg.strict)
        if abs(deg) < 1e-6 * max(1.0, geom.volume):
            h, defect = cw.harmonic_line_metric(spec, H)
            harmonic = {"flatness_defect": defect}
            H = h
        for eps in eps_list:
            r = cw.nef_residual(spec, H, eps)
            entries.append({"eps": eps, "residual": r, "certified": bool(r >= 0)})
        kind = "line"
    elif spec.rank == 2:
        res = int(cfg.projectivization.get("fiber_res", 32))
        grid = pj.build_fibered_grid(spec, H, fiber_res=res)
        for eps in eps_list:
            r = pj.oe1_nef_margin(grid, eps)
            entries.append({"eps": eps, "residual": r, "certified": bool(r >= 0)})
        kind = "projectivized"
    else:
        raise ConfigError("nef-cert supports rank 1 and rank 2 bundles",
                          where="bundle")
    summary["projectivization"] = {
        "nef_certificates": entries, "kind": kind,
        "harmonic_line": harmonic,
        "note": ("explicit certificate families exist for flat bundles and "
                 "extensions; other inputs report no_certificate when the "
                 "margin is negative"),
    }


COMMANDS = {
    "check-geometry": cmd_check_geometry,
    "chern": cmd_chern,
    "flow": cmd_flow,
    "perturbed": cmd_perturbed,
    "approx-flat": cmd_approx_flat,
    "segre": cmd_segre,
    "nef-cert": cmd_nef_cert,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="hymlab", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--strict", action="store_true")
        p.add_argument("--seed", type=int, default=None)
        if name == "flow":
            p.add_argument("--resume", default=None,
                           help="metric checkpoint to continue from")
        if name == "perturbed":
            p.add_argument("--eps", type=float, default=None)
        if name == "nef-cert":
            p.add_argument("--eps-list", type=float, nargs="+", default=None)
            p.add_argument("--metric-checkpoint", default=None)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.strict:
            cfg.strict = True
        if args.seed is not None:
            cfg.seed = args.seed
        threads = args.threads if args.threads is not None else cfg.threads
        gm.set_fft_workers(threads)
        outdir = args.out or cfg.output.get("dir", "out")
        os.makedirs(outdir, exist_ok=True)
        summary = _fresh_summary()
        kwargs = {}
        if args.command == "flow":
            kwargs["resume"] = args.resume
        if args.command == "perturbed":
            kwargs["eps"] = args.eps
        if args.command == "nef-cert":
            kwargs["eps_list"] = args.eps_list
            kwargs["metric_checkpoint"] = args.metric_checkpoint
        COMMANDS[args.command](cfg, outdir, summary, **kwargs)
        _write_summary(outdir, summary)
        return 0
    except ConfigError as exc:
        json.dump({"error": "config", "message": str(exc),
                   "where": exc.where}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except (gm.GeometryError, bd.BundleError, hm.MetricError,
            cw.DegreeError, pj.ProjectivizationError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except (gm.SolverError,) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc),
                   "residuals": getattr(exc, "residuals", [])[-5:]}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
