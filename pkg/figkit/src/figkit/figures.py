"""Render static figures from the laboratory's experiment CSVs.

Three figure kinds are supported: the scaling-exponent phase diagram over the
power-law (alpha, gamma) plane, learning curves (risk vs step or vs sample
count with seed bands), and effective-dimension scaling plots.  Rendering is
pure: the arrays handed to matplotlib equal the CSV contents exactly, with no
smoothing or interpolation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "FigureJob",
    "SchemaError",
    "exponent_cases",
    "case_boundaries",
    "load_csv",
    "phase_heatmap",
    "learning_curves",
    "deff_scaling",
]

PHASE_COLUMNS = ("alpha", "gamma", "slope_measured", "slope_predicted",
                 "abs_dev")
TRACE_COLUMNS = ("step", "train_risk", "reg", "total", "test_risk", "test01",
                 "alignment", "seconds")
SAMPLE_COLUMNS = ("label", "n", "seed", "excess_risk", "test01", "status")
DEFF_COLUMNS = ("label", "d", "deff", "slope_measured", "slope_predicted")


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class FigureJob:
    inputs: tuple[str, ...]
    kind: str                      # phase_heatmap | learning_curves | deff_scaling
    output: str
    title: Optional[str] = None
    x_axis: str = "auto"           # learning_curves: step | n | auto

    def __post_init__(self):
        if self.kind not in ("phase_heatmap", "learning_curves",
                             "deff_scaling"):
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise ValueError("need at least one input CSV")


def load_csv(path: str | Path, required: tuple[str, ...]) -> dict[str, list]:
    """Columns as lists of strings; missing columns are named in the error."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        for col in required:
            if col not in names:
                raise SchemaError(f"{path} is missing column {col!r}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path} has no data rows")
    return {col: [row[col] for row in rows] for col in names}


def exponent_cases(alpha: float, gamma: float) -> float:
    """Predicted effective-dimension scaling exponent for a power-law
    spectrum i^-alpha with alignment decay i^-gamma."""
    if alpha < 1.0 and gamma < 1.0:
        return min(1.0, 2.0 - alpha - gamma)
    if alpha < 1.0:
        return 1.0 - alpha
    return max(1.0 - gamma, 0.0)


def case_boundaries(alpha_lim: tuple[float, float],
                    gamma_lim: tuple[float, float]) -> list[tuple]:
    """Analytic region boundaries of the exponent case analysis, clipped to
    the plotted window: the spectrum-summability split alpha = 1, the
    alignment-summability split gamma = 1, and the zero level of the
    2 - alpha - gamma case (the line alpha + gamma = 2)."""
    a_lo, a_hi = alpha_lim
    g_lo, g_hi = gamma_lim
    segs = []
    if a_lo <= 1.0 <= a_hi:
        segs.append((np.array([1.0, 1.0]), np.array([g_lo, g_hi])))
    if g_lo <= 1.0 <= g_hi:
        segs.append((np.array([a_lo, a_hi]), np.array([1.0, 1.0])))
    a0 = max(a_lo, 2.0 - g_hi)
    a1 = min(a_hi, 2.0 - g_lo)
    if a0 <= a1:
        alphas = np.array([a0, a1])
        segs.append((alphas, 2.0 - alphas))
    return segs


def _phase_grid(data: dict[str, list]):
    alphas = np.array([float(v) for v in data["alpha"]])
    gammas = np.array([float(v) for v in data["gamma"]])
    a_vals = np.unique(alphas)
    g_vals = np.unique(gammas)
    measured = np.full((g_vals.size, a_vals.size), np.nan)
    predicted = np.full_like(measured, np.nan)
    ai = np.searchsorted(a_vals, alphas)
    gi = np.searchsorted(g_vals, gammas)
    measured[gi, ai] = [float(v) for v in data["slope_measured"]]
    predicted[gi, ai] = [float(v) for v in data["slope_predicted"]]
    return a_vals, g_vals, measured, predicted


def phase_heatmap(job: FigureJob):
    """Two-panel heatmap (measured | predicted exponent) with the analytic
    region boundaries overlaid.  Returns the figure; also writes the file."""
    data = load_csv(job.inputs[0], PHASE_COLUMNS)
    a_vals, g_vals, measured, predicted = _phase_grid(data)
    extent = (float(a_vals[0]), float(a_vals[-1]),
              float(g_vals[0]), float(g_vals[-1]))
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.5), sharey=True)
    for ax, grid, label in ((axes[0], measured, "measured slope"),
                            (axes[1], predicted, "predicted exponent")):
        im = ax.imshow(grid, origin="lower", extent=extent, aspect="auto",
                       vmin=0.0, vmax=1.0, interpolation="none")
        for xs, ys in case_boundaries((extent[0], extent[1]),
                                      (extent[2], extent[3])):
            ax.plot(xs, ys, color="white", lw=1.2, ls="--")
        ax.set_xlabel("alpha (spectrum decay)")
        ax.set_title(label)
    axes[0].set_ylabel("gamma (alignment decay)")
    fig.colorbar(im, ax=axes, shrink=0.9)
    if job.title:
        fig.suptitle(job.title)
    fig.savefig(job.output, dpi=150)
    return fig


def _group_band(ax, xs, ys_by_seed, label):
    xs = np.asarray(xs, dtype=float)
    stack = np.stack(ys_by_seed)
    mean = stack.mean(axis=0)
    ax.plot(xs, mean, label=label)
    if stack.shape[0] > 1:
        ax.fill_between(xs, stack.min(axis=0), stack.max(axis=0), alpha=0.25)


def learning_curves(job: FigureJob):
    """Risk-vs-step curves from trace CSVs, or risk-vs-n curves grouped by
    covariance label (with min/max seed bands) from campaign CSVs."""
    first = load_csv(job.inputs[0], ())
    is_trace = "step" in first
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    if is_trace:
        for path in job.inputs:
            data = load_csv(path, TRACE_COLUMNS)
            steps = [int(v) for v in data["step"]]
            ax.plot(steps, [float(v) for v in data["test_risk"]],
                    label=Path(path).stem)
        ax.set_xlabel("step")
        ax.set_ylabel("test risk")
    else:
        data = load_csv(job.inputs[0], SAMPLE_COLUMNS)
        labels = sorted(set(data["label"]))
        for label in labels:
            rows = [(int(n), int(s), float(e))
                    for l, n, s, e, st in zip(data["label"], data["n"],
                                              data["seed"],
                                              data["excess_risk"],
                                              data["status"])
                    if l == label and st == "ok"]
            if not rows:
                continue
            ns = sorted({n for n, _, _ in rows})
            seeds = sorted({s for _, s, _ in rows})
            curves = [[e for n in ns for nn, ss, e in rows
                       if nn == n and ss == seed] for seed in seeds]
            _group_band(ax, ns, [np.array(c) for c in curves], label)
        ax.set_xlabel("n (training samples)")
        ax.set_ylabel("final excess risk")
    ax.set_yscale("log")
    ax.legend()
    if job.title:
        ax.set_title(job.title)
    fig.savefig(job.output, dpi=150)
    return fig


def deff_scaling(job: FigureJob):
    """Log-log effective dimension vs input dimension per covariance family,
    annotated with fitted and predicted slopes."""
    data = load_csv(job.inputs[0], DEFF_COLUMNS)
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for label in sorted(set(data["label"])):
        pts = [(int(d), float(v), float(sm), float(sp))
               for l, d, v, sm, sp in zip(data["label"], data["d"],
                                          data["deff"],
                                          data["slope_measured"],
                                          data["slope_predicted"])
               if l == label]
        ds = [p[0] for p in pts]
        vals = [p[1] for p in pts]
        sm, sp = pts[0][2], pts[0][3]
        ax.plot(ds, vals, marker="o",
                label=f"{label} (fit {sm:.2f}, predicted {sp:.2f})")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("d")
    ax.set_ylabel("effective dimension")
    ax.legend()
    if job.title:
        ax.set_title(job.title)
    fig.savefig(job.output, dpi=150)
    return fig
