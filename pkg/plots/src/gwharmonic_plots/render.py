"""Publication-style figures from gwharmonic CSV outputs.

Three figure kinds, each reading only the documented CSV schemas and never
recomputing statistics:

  scaling     - per-n means with error bars plus the fitted line, from a
                thm1-scaling or beta-scaling table
  lambda_curve - exponent versus index with the 1/(alpha-1) reference and a
                (alpha-1)^2-scaled panel, from a lambda-sweep table
  cdf_overlay - empirical size-biased-conductance CDF on [1,2] against the
                one-parameter closed form fitted by least squares, from one
                or more pool snapshots
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["FigureSpec", "SchemaError", "render", "KINDS"]

KINDS = ("scaling", "lambda_curve", "cdf_overlay")

TABLE_COLUMNS = {"experiment", "alpha", "gamma", "n", "statistic",
                 "value", "stderr", "n_samples"}
POOL_COLUMNS = {"alpha", "kind", "value"}


class SchemaError(ValueError):
    """Input file does not carry the expected columns or rows."""


@dataclass
class FigureSpec:
    kind: str
    inputs: list[str] = field(default_factory=list)
    out: str = ""
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""


def read_table(path, required=TABLE_COLUMNS):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = set(reader.fieldnames or ())
        missing = required - header
        if missing:
            raise SchemaError(f"{path}: missing columns {sorted(missing)}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _scaling(spec, ax):
    rows = read_table(spec.inputs[0])
    points = [r for r in rows if r["n"] and r["statistic"].endswith("_mean")]
    slopes = [r for r in rows if r["statistic"] == "slope"]
    if not points or not slopes:
        raise SchemaError(f"{spec.inputs[0]}: not a scaling table")
    n = np.array([float(r["n"]) for r in points])
    y = np.array([float(r["value"]) for r in points])
    err = np.array([float(r["stderr"]) for r in points])
    slope = float(slopes[0]["value"])
    ax.errorbar(n, y, yerr=err, fmt="o", capsize=3, label="per-level mean")
    x = np.log(n)
    intercept = (y - slope * x).mean()
    grid = np.linspace(x.min(), x.max(), 50)
    ax.plot(np.exp(grid), slope * grid + intercept, "-",
            label=f"fit, slope {slope:.3f}")
    ax.set_xscale("log")
    ax.set_xlabel(spec.xlabel or "level n")
    ax.set_ylabel(spec.ylabel or points[0]["statistic"])
    ax.legend()


def _lambda_curve(spec, fig):
    rows = read_table(spec.inputs[0])
    lam = [r for r in rows if r["statistic"] == "lambda"]
    sq = [r for r in rows if r["statistic"] == "lambda_times_gap_sq"]
    if not lam:
        raise SchemaError(f"{spec.inputs[0]}: no exponent rows")
    alpha = np.array([float(r["alpha"]) for r in lam])
    order = np.argsort(alpha)
    alpha = alpha[order]
    val = np.array([float(r["value"]) for r in lam])[order]
    err = np.array([float(r["stderr"]) for r in lam])[order]
    ax1, ax2 = fig.subplots(1, 2)
    ax1.errorbar(alpha, val, yerr=err, fmt="o-", label="estimate")
    ref = np.linspace(alpha.min(), alpha.max(), 100)
    ax1.plot(ref, 1.0 / (ref - 1.0), "--", label="1/(alpha-1)")
    ax1.set_yscale("log")
    ax1.set_xlabel("alpha")
    ax1.set_ylabel(spec.ylabel or "mass exponent")
    ax1.legend()
    if sq:
        a2 = np.array([float(r["alpha"]) for r in sq])
        o2 = np.argsort(a2)
        ax2.errorbar(a2[o2], np.array([float(r["value"]) for r in sq])[o2],
                     yerr=np.array([float(r["stderr"]) for r in sq])[o2],
                     fmt="s-")
    ax2.set_xlabel("alpha")
    ax2.set_ylabel("(alpha-1)^2 x exponent")


def _cdf_overlay(spec, ax):
    for path in spec.inputs:
        rows = read_table(path, required=POOL_COLUMNS)
        alpha = float(rows[0]["alpha"])
        values = np.array([float(r["value"]) for r in rows])
        values.sort()
        t = np.linspace(1.0, 2.0, 200)
        cdf = np.searchsorted(values, t, side="right") / len(values)
        expo = alpha / (alpha - 1.0)
        x = ((t - 1.0) / t) ** expo
        a0 = float((x * cdf).sum() / (x * x).sum())
        ax.plot(t, cdf, "-", label=f"empirical, alpha={alpha:g}")
        ax.plot(t, a0 * x, "--", label=f"fit A0={a0:.3f}")
    ax.set_xlabel("conductance")
    ax.set_ylabel(spec.ylabel or "CDF on [1, 2]")
    ax.legend()


def render(spec: FigureSpec):
    """Write the figure for `spec`; returns the output path."""
    if spec.kind not in KINDS:
        raise SchemaError(f"unknown figure kind {spec.kind!r}")
    if not spec.inputs:
        raise SchemaError("no input files given")
    fig = plt.figure(figsize=(9, 4.5) if spec.kind == "lambda_curve" else (6, 4.5))
    try:
        if spec.kind == "scaling":
            _scaling(spec, fig.subplots())
        elif spec.kind == "lambda_curve":
            _lambda_curve(spec, fig)
        else:
            _cdf_overlay(spec, fig.subplots())
        if spec.title:
            fig.suptitle(spec.title)
        fig.tight_layout()
        fig.savefig(spec.out, dpi=110, metadata={"Software": "gwharmonic-plots"})
    finally:
        plt.close(fig)
    return spec.out
