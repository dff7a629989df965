"""The repository's standard figures, rendered deterministically.

One chart per file, fixed size and DPI, no timestamps; the render
functions return the plotted series so callers can check them.
"""

from __future__ import annotations

import math

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .frames import InputError, TraceFrame

FIGSIZE = (6.0, 4.0)
DPI = 150


def _new_axes(title, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    return fig, ax


def plot_energy(trace: TraceFrame, out_path):
    """Yang-Mills energy decay over flow time, one line per stage."""
    fig, ax = _new_axes("Yang-Mills energy along the flow", "t", "YM(t)")
    groups = trace.split_by_eps()
    plotted = {}
    for key in sorted(groups, key=str):
        g = groups[key]
        label = "flow" if key == "nan" else f"eps = {key:g}"
        ax.plot(g["t"], g["ym_energy"], label=label, linewidth=1.2)
        plotted[key] = (g["t"], g["ym_energy"])
    if any(v > 0 for v in trace["ym_energy"]):
        ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.savefig(out_path, bbox_inches="tight")
    plt.close(fig)
    return plotted


def _eps_series(summary):
    pipeline = summary.get("pipeline")
    if not pipeline:
        raise InputError("summary has no pipeline section")
    for key in ("eps_schedule", "sup_f_after", "he_residuals"):
        if key not in pipeline:
            raise InputError(f"pipeline summary is missing {key!r}")
    eps = [float(e) for e in pipeline["eps_schedule"]]
    sup = [float(s) for s in pipeline["sup_f_after"]]
    he = [float(h) for h in pipeline["he_residuals"]]
    keep = [i for i in range(len(eps))
            if not (math.isnan(sup[i]) or math.isnan(he[i]))]
    return ([eps[i] for i in keep], [sup[i] for i in keep],
            [he[i] for i in keep])


def plot_eps_sweep(summary, out_path):
    """sup |F| after the flow stage against the continuity parameter."""
    eps, sup, _ = _eps_series(summary)
    if not eps:
        raise InputError("pipeline summary has no finite stages to plot")
    fig, ax = _new_axes("Curvature sup-norm across the continuity schedule",
                        "eps", "sup |F| after flow")
    ax.loglog(eps, sup, "o-", linewidth=1.2)
    ax.invert_xaxis()  # schedule runs toward eps -> 0
    fig.savefig(out_path, bbox_inches="tight")
    plt.close(fig)
    return eps, sup


def plot_he_residuals(summary, out_path):
    """Einstein defect of the perturbed solutions across the schedule."""
    eps, _, he = _eps_series(summary)
    if not eps:
        raise InputError("pipeline summary has no finite stages to plot")
    fig, ax = _new_axes("Einstein defect of the perturbed solutions",
                        "eps", "sup |i Lambda F - lambda Id|")
    ax.semilogx(eps, he, "s-", color="#a03030", linewidth=1.2)
    ax.invert_xaxis()
    fig.savefig(out_path, bbox_inches="tight")
    plt.close(fig)
    return eps, he


def plot_segre(summary, out_path):
    """Bar chart of the Segre push-forward discrepancies."""
    proj = summary.get("projectivization")
    if not proj or "segre_checks" not in proj:
        raise InputError("summary has no projectivization.segre_checks section")
    checks = proj["segre_checks"]
    keys = sorted(checks)
    vals = [max(float(checks[k]), 1e-18) for k in keys]
    fig, ax = _new_axes("Segre push-forward discrepancies", "k", "|discrepancy|")
    ax.bar(range(len(keys)), vals, color="#305080")
    ax.set_xticks(range(len(keys)), keys)
    ax.set_yscale("log")
    fig.savefig(out_path, bbox_inches="tight")
    plt.close(fig)
    return keys, vals
