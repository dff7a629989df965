"""Batch figure renderer for hymlab run directories.

    plots render --in RUNDIR --out FIGDIR

Reads RUNDIR/trace.csv and RUNDIR/summary.json and writes the standard
figures (energy decay, eps sweep, Einstein-defect sweep, Segre bars) for
whichever inputs are present.  Never modifies its inputs.  Exits 0 on
success, 2 when the inputs are missing or malformed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .frames import InputError, TraceFrame, load_summary
from . import render


def render_dir(indir, outdir):
    os.makedirs(outdir, exist_ok=True)
    made = {}
    trace_path = os.path.join(indir, "trace.csv")
    summary_path = os.path.join(indir, "summary.json")
    if not os.path.exists(trace_path) and not os.path.exists(summary_path):
        raise InputError(f"{indir} has neither trace.csv nor summary.json")
    if os.path.exists(trace_path):
        trace = TraceFrame.load(trace_path)
        out = os.path.join(outdir, "energy.png")
        render.plot_energy(trace, out)
        made["energy"] = out
    if os.path.exists(summary_path):
        summary = load_summary(summary_path)
        if summary.get("pipeline"):
            out = os.path.join(outdir, "eps_sweep.png")
            eps, sup = render.plot_eps_sweep(summary, out)
            made["eps_sweep"] = out
            out = os.path.join(outdir, "he_residuals.png")
            render.plot_he_residuals(summary, out)
            made["he_residuals"] = out
        proj = summary.get("projectivization") or {}
        if "segre_checks" in proj:
            out = os.path.join(outdir, "segre.png")
            render.plot_segre(summary, out)
            made["segre"] = out
    if not made:
        raise InputError("inputs contained nothing to plot")
    return made


def main(argv=None):
    ap = argparse.ArgumentParser(prog="plots", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", dest="outdir", required=True)
    args = ap.parse_args(argv)
    try:
        made = render_dir(args.indir, args.outdir)
    except InputError as exc:
        json.dump({"error": "input", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    for name, path in sorted(made.items()):
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
