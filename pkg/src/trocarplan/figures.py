"""Figure rendering for planned trajectories and planner comparisons.

Everything renders through the Agg backend straight to PNG files, so the
functions work in batch jobs without a display.  Files are written
atomically like every other artifact.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import _METRIC_FIELDS, ComparisonReport
from .fileio import atomic_write_bytes

_LABELS = {"joint": "joint (proposed)", "position": "position baseline"}
_COLORS = {"joint": "tab:blue", "position": "tab:orange"}


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=150)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def _tips(curve, n: int = 400) -> np.ndarray:
    t = np.linspace(0.0, curve.duration, n) if curve.duration > 0.0 \
        else np.array([0.0])
    return np.atleast_2d(curve.evaluate(t))


def render_trajectory(scene, curve, path, *, title: str = "tip path") -> None:
    """Side and top view of the tip path inside the boundary sample cloud."""
    tips = _tips(curve)
    cloud = scene.boundary_samples
    fig, axes = plt.subplots(1, 2, figsize=(11, 5))
    for ax, (i, j), names in zip(axes, ((0, 2), (0, 1)),
                                 (("x [mm]", "z [mm]"), ("x [mm]", "y [mm]"))):
        ax.scatter(cloud[:, i], cloud[:, j], s=1.5, c="0.8",
                   label="forbidden boundary")
        ax.plot(tips[:, i], tips[:, j], color="tab:blue", lw=1.8, label="tip path")
        ax.plot(*scene.port[[i, j]], marker="x", ms=9, c="k", ls="none",
                label="port")
        ax.plot(*tips[0, [i, j]], marker="o", c="tab:green", ls="none",
                label="start")
        ax.plot(*tips[-1, [i, j]], marker="s", c="tab:red", ls="none",
                label="goal")
        ax.set_xlabel(names[0])
        ax.set_ylabel(names[1])
        ax.set_aspect("equal")
    axes[0].legend(loc="lower left", fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def render_angle_profile(reports, path) -> None:
    """Insertion angle and its arc-length slope for one or more runs."""
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for report in reports:
        color = _COLORS.get(report.planner)
        label = f"{_LABELS.get(report.planner, report.planner)} seed {report.seed}"
        top.plot(report.trace_s_mm, report.trace_psi_deg, color=color,
                 alpha=0.8, lw=1.2, label=label)
        bottom.plot(report.trace_s_mm, report.trace_dpsi_deg_per_mm,
                    color=color, alpha=0.8, lw=1.2)
    top.set_ylabel("insertion angle [deg]")
    bottom.set_ylabel("d(angle)/ds [deg/mm]")
    bottom.set_xlabel("arc length [mm]")
    if len(reports) <= 6:
        top.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_joint_profile(mapped, path) -> None:
    """All five joint angles (degrees) along a mapped joint-space plan."""
    t = np.linspace(0.0, mapped.duration, 400) if mapped.duration > 0.0 \
        else np.array([0.0])
    q = np.degrees(mapped.lift5(t))
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for k in range(5):
        ax.plot(t, q[:, k], label=f"q{k + 1}")
    ax.set_xlabel("path parameter")
    ax.set_ylabel("joint angle [deg]")
    ax.legend(fontsize=8, ncol=5)
    fig.tight_layout()
    _save(fig, path)


def render_comparison(report: ComparisonReport, path) -> None:
    """Mean +/- spread bars per metric, joint planner versus baseline."""
    fig, axes = plt.subplots(1, len(_METRIC_FIELDS), figsize=(15, 3.6))
    for ax, metric in zip(axes, _METRIC_FIELDS):
        for pos, planner in enumerate(("joint", "position")):
            if not report.reports(planner):
                continue
            ax.bar(pos, report.mean(planner, metric),
                   yerr=report.spread(planner, metric),
                   color=_COLORS[planner], width=0.6, capsize=4)
        ax.set_xticks([0, 1])
        ax.set_xticklabels(["joint", "position"], fontsize=8)
        ax.set_title(metric, fontsize=9)
    fig.tight_layout()
    _save(fig, path)
