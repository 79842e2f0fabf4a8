"""Insertion-angle metrics, buffer calibration, and planner comparison.

The quality of a planned tip curve is judged by the insertion angle psi,
the angle between the port-to-tip shaft direction and the vertical.  Large
psi means the instrument leans hard against the body wall; its derivative
along the path measures how fast the lean changes.  Joint-space plans are
mapped through the forward kinematics first so both planners are scored on
the same position-space footing.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import arm_model
from . import roadmap_planner as rp
from .errors import DegenerateInput, IKFailure, NoSolution, PlanningError
from .fileio import atomic_write_text
from .joint_obstacle_map import BoundaryMesh

_TINY = 1e-12


def insertion_angle(x, p) -> float:
    """Angle in radians between the port-to-tip direction and vertical.

    Zero for a tip straight below the port, approaching pi/2 as the tip
    nears the port plane.  Tips above the port plane have no principal
    value and give NaN.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    lateral = math.hypot(x[0] - p[0], x[1] - p[1])
    drop = p[2] - x[2]                 # positive below the port
    if lateral < _TINY and abs(drop) < _TINY:
        raise DegenerateInput("insertion angle undefined at the port itself")
    if drop < 0.0:
        return math.nan
    return math.atan2(lateral, drop)


def _psi_batch(xs: np.ndarray, p: np.ndarray) -> np.ndarray:
    lateral = np.hypot(xs[:, 0] - p[0], xs[:, 1] - p[1])
    drop = p[2] - xs[:, 2]
    psi = np.arctan2(lateral, drop)
    psi[drop < 0.0] = np.nan
    return psi


def _sample_curve(curve, samples_per_segment: int):
    """Dense (t, x, xdot) samples over the whole curve."""
    knots = getattr(curve, "knots", None)
    if knots is None:
        knots = curve.trajectory.knots
    segments = max(1, knots.shape[0] - 1)
    n = max(2, segments * samples_per_segment + 1)
    t = np.linspace(0.0, curve.duration, n)
    x = np.atleast_2d(curve.evaluate(t))
    xdot = np.atleast_2d(curve.derivative(t))
    return t, x, xdot


def _psi_and_slope(curve, p, samples_per_segment: int):
    """psi, dpsi/ds and the arc-length increments along the curve."""
    if curve.duration <= 0.0:
        raise DegenerateInput("cannot score a zero-length curve")
    p = np.asarray(p, dtype=float)
    t, x, xdot = _sample_curve(curve, samples_per_segment)

    psi = _psi_batch(x, p)
    if np.isnan(psi).any():
        warnings.warn("curve samples above the port plane excluded from "
                      "insertion-angle statistics")

    rho_vec = x[:, :2] - p[:2]
    rho = np.hypot(rho_vec[:, 0], rho_vec[:, 1])
    drop = p[2] - x[:, 2]
    rho_dot = np.sum(rho_vec * xdot[:, :2], axis=1) / np.maximum(rho, _TINY)
    drop_dot = -xdot[:, 2]
    # d/dt atan2(rho, drop)
    psi_dot = (drop * rho_dot - rho * drop_dot) / np.maximum(
        rho * rho + drop * drop, _TINY)
    speed = np.linalg.norm(xdot, axis=1)
    dpsi_ds = psi_dot / np.maximum(speed, _TINY)
    dpsi_ds[np.isnan(psi)] = np.nan

    ds = 0.5 * (speed[:-1] + speed[1:]) * np.diff(t)
    return psi, dpsi_ds, ds


def _trapezoid_over_valid(values, psi, ds) -> float:
    # integrate only segments whose endpoints both have a principal angle
    valid = ~np.isnan(psi)
    seg_ok = valid[:-1] & valid[1:]
    length = float(np.sum(ds[seg_ok]))
    if length <= 0.0:
        raise DegenerateInput("no measurable curve below the port plane")
    integral = float(np.sum(0.5 * (values[:-1] + values[1:])[seg_ok]
                            * ds[seg_ok]))
    return integral / length


def _angle_stats_from(psi, ds):
    return _trapezoid_over_valid(psi, psi, ds), float(np.nanmax(psi))


def _slope_stats_from(psi, dpsi_ds, ds):
    mean_sq = _trapezoid_over_valid(dpsi_ds ** 2, psi, ds)
    return math.sqrt(mean_sq), float(np.nanmax(np.abs(dpsi_ds)))


def angle_stats(curve, p, *, samples_per_segment: int = 1000):
    """Arc-length weighted mean and max insertion angle, in radians."""
    psi, _, ds = _psi_and_slope(curve, p, samples_per_segment)
    return _angle_stats_from(psi, ds)


def angle_derivative_stats(curve, p, *, samples_per_segment: int = 1000):
    """RMS and max of dpsi/ds along the curve, in radians per mm."""
    psi, dpsi_ds, ds = _psi_and_slope(curve, p, samples_per_segment)
    return _slope_stats_from(psi, dpsi_ds, ds)


@dataclass(frozen=True, eq=False)
class MetricsReport:
    """Insertion-angle scorecard of one planned curve."""

    planner: str                 # "joint" | "position"
    seed: int
    psi_ave_deg: float
    psi_max_deg: float
    dpsi_rms_deg_per_mm: float
    dpsi_max_deg_per_mm: float
    path_length_mm: float
    trace_s_mm: np.ndarray
    trace_psi_deg: np.ndarray
    trace_dpsi_deg_per_mm: np.ndarray

    def __post_init__(self):
        if self.path_length_mm <= 0.0:
            raise DegenerateInput("path length must be positive")
        if self.psi_max_deg < self.psi_ave_deg:
            raise DegenerateInput("max angle below the mean angle")

    def as_dict(self) -> dict:
        return {
            "planner": self.planner,
            "seed": self.seed,
            "psi_ave_deg": self.psi_ave_deg,
            "psi_max_deg": self.psi_max_deg,
            "dpsi_rms_deg_per_mm": self.dpsi_rms_deg_per_mm,
            "dpsi_max_deg_per_mm": self.dpsi_max_deg_per_mm,
            "path_length_mm": self.path_length_mm,
        }


def path_metrics(curve, p, *, planner: str, seed: int,
                 samples_per_segment: int = 1000) -> MetricsReport:
    """Full scorecard with per-sample traces for external plotting."""
    psi, dpsi_ds, ds = _psi_and_slope(curve, p, samples_per_segment)
    psi_ave, psi_max = _angle_stats_from(psi, ds)
    dpsi_rms, dpsi_max = _slope_stats_from(psi, dpsi_ds, ds)
    s = np.concatenate([[0.0], np.cumsum(ds)])
    return MetricsReport(
        planner=planner, seed=seed,
        psi_ave_deg=math.degrees(psi_ave),
        psi_max_deg=math.degrees(psi_max),
        dpsi_rms_deg_per_mm=math.degrees(dpsi_rms),
        dpsi_max_deg_per_mm=math.degrees(dpsi_max),
        path_length_mm=float(s[-1]),
        trace_s_mm=s,
        trace_psi_deg=np.degrees(psi),
        trace_dpsi_deg_per_mm=np.degrees(dpsi_ds))


# ---------------------------------------------------------------------------
# Buffer calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Mean joint-space displacement matching a position-space buffer."""

    sigma_q_rad: float
    sigma_x_mm: float
    per_triangle_rad: np.ndarray
    skipped: int

    @property
    def sigma_q_deg(self) -> float:
        return math.degrees(self.sigma_q_rad)


def calibrate_sigma_q(mesh: BoundaryMesh, arm: arm_model.ArmGeometry,
                      port, sigma_x: float) -> CalibrationResult:
    """Joint-space buffer equivalent to displacing each boundary triangle's
    centroid by sigma_x along its normal.

    For every triangle the centroid is offset by +/- sigma_x/2 along the
    unit normal, both offsets are inverse-kinematics solved, and the
    5-vector joint difference norm is averaged.  Triangles whose offsets
    the arm cannot reach are skipped and counted.  The sign of the normal
    does not matter: swapping the two offsets leaves the norm unchanged.
    """
    if sigma_x < 0.0:
        raise DegenerateInput("sigma_x must be non-negative")
    port = np.asarray(port, dtype=float)
    values = []
    skipped = 0
    for tri in mesh.triangles:
        corners = mesh.position[tri]
        normal = np.cross(corners[1] - corners[0], corners[2] - corners[0])
        area2 = np.linalg.norm(normal)
        if area2 < _TINY:
            skipped += 1
            continue
        normal /= area2
        centroid = corners.mean(axis=0)
        try:
            q_plus = arm_model.inverse_kinematics(
                centroid + 0.5 * sigma_x * normal, port, arm).as_array()
            q_minus = arm_model.inverse_kinematics(
                centroid - 0.5 * sigma_x * normal, port, arm).as_array()
        except (IKFailure, NoSolution):
            skipped += 1
            continue
        values.append(float(np.linalg.norm(q_plus - q_minus)))
    if not values:
        raise IKFailure("no boundary triangle admits the displaced "
                        "inverse-kinematics solves")
    per_triangle = np.array(values)
    return CalibrationResult(sigma_q_rad=float(per_triangle.mean()),
                             sigma_x_mm=float(sigma_x),
                             per_triangle_rad=per_triangle,
                             skipped=skipped)


# ---------------------------------------------------------------------------
# Side-by-side comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RunRecord:
    """Outcome of one planner on one seed: a report or an error string."""

    seed: int
    planner: str
    report: MetricsReport | None
    error: str | None


_METRIC_FIELDS = ("psi_ave_deg", "psi_max_deg", "dpsi_max_deg_per_mm",
                  "dpsi_rms_deg_per_mm", "path_length_mm")


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    """Aggregated planner-versus-baseline metrics over a seed list."""

    records: tuple
    sigma_q_rad: float
    sigma_x_mm: float

    def reports(self, planner: str) -> list:
        return [r.report for r in self.records
                if r.planner == planner and r.report is not None]

    def mean(self, planner: str, field: str) -> float:
        vals = [getattr(r, field) for r in self.reports(planner)]
        if not vals:
            raise DegenerateInput(f"no successful {planner} runs")
        return float(np.mean(vals))

    def spread(self, planner: str, field: str) -> float:
        vals = [getattr(r, field) for r in self.reports(planner)]
        if len(vals) < 2:
            return 0.0
        return float(np.std(vals, ddof=1))

    def as_dict(self) -> dict:
        rows = []
        for rec in self.records:
            rows.append({
                "seed": rec.seed,
                "planner": rec.planner,
                "error": rec.error,
                "metrics": rec.report.as_dict() if rec.report else None,
            })
        summary = {}
        for planner in ("joint", "position"):
            if not self.reports(planner):
                continue
            summary[planner] = {
                field: {"mean": self.mean(planner, field),
                        "std": self.spread(planner, field)}
                for field in _METRIC_FIELDS
            }
        return {
            "sigma_q_deg": math.degrees(self.sigma_q_rad),
            "sigma_x_mm": self.sigma_x_mm,
            "summary": summary,
            "runs": rows,
        }

    def format_table(self) -> str:
        """Aligned-column text summary, one row per planner."""
        header = (f"{'planner':<20}{'psi_ave[deg]':>18}{'psi_max[deg]':>18}"
                  f"{'dpsi_max[deg/mm]':>22}{'dpsi_RMS[deg/mm]':>22}"
                  f"{'length[mm]':>18}")
        lines = [header, "-" * len(header)]
        labels = {"joint": "joint (proposed)", "position": "position baseline"}
        for planner in ("joint", "position"):
            if not self.reports(planner):
                lines.append(f"{labels[planner]:<20}{'all runs failed':>18}")
                continue
            cells = []
            for field, width in zip(_METRIC_FIELDS, (18, 18, 22, 22, 18)):
                m = self.mean(planner, field)
                s = self.spread(planner, field)
                cells.append(f"{m:.3f} +/- {s:.3f}".rjust(width))
            lines.append(f"{labels[planner]:<20}" + "".join(cells))
        failures = [r for r in self.records if r.error is not None]
        for rec in failures:
            lines.append(f"  seed {rec.seed} {rec.planner}: {rec.error}")
        return "\n".join(lines)


def compare(scene, arm: arm_model.ArmGeometry, mesh: BoundaryMesh,
            params: rp.PlannerParams, seeds,
            *, position_params: rp.PlannerParams | None = None,
            samples_per_segment: int = 1000) -> ComparisonReport:
    """Run both planners on every seed and aggregate their scorecards.

    Planner failures do not abort the sweep; they are recorded per row.
    The baseline reuses ``params`` unless a separate node budget is given
    via ``position_params``.
    """
    if position_params is None:
        position_params = params
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise DegenerateInput("need at least one seed")
    records = []
    for seed in seeds:
        try:
            _, mapped = rp.plan_joint_space(scene, arm, mesh, params, seed)
            report = path_metrics(mapped, scene.port, planner="joint",
                                  seed=seed,
                                  samples_per_segment=samples_per_segment)
            records.append(RunRecord(seed, "joint", report, None))
        except PlanningError as exc:
            records.append(RunRecord(seed, "joint", None, str(exc)))
        try:
            traj = rp.plan_position_space(scene, position_params, seed)
            report = path_metrics(traj, scene.port, planner="position",
                                  seed=seed,
                                  samples_per_segment=samples_per_segment)
            records.append(RunRecord(seed, "position", report, None))
        except PlanningError as exc:
            records.append(RunRecord(seed, "position", None, str(exc)))
    return ComparisonReport(records=tuple(records),
                            sigma_q_rad=params.sigma_q,
                            sigma_x_mm=params.sigma_x)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def export_report_json(report: ComparisonReport, path) -> None:
    atomic_write_text(path, json.dumps(report.as_dict(), indent=2) + "\n")


def export_trace_csv(report: MetricsReport, path) -> None:
    """Per-sample insertion-angle trace for external plotting."""
    rows = ["s_mm,psi_deg,dpsi_deg_per_mm"]
    for s, a, d in zip(report.trace_s_mm, report.trace_psi_deg,
                       report.trace_dpsi_deg_per_mm):
        rows.append(f"{s:.9f},{a:.9f},{d:.9f}")
    atomic_write_text(path, "\n".join(rows) + "\n")
