"""Batch command-line front end.

Subcommands:
  map        boundary-mapping artifacts: OBJ mesh plus JSON sidecar
  plan       one planner run (--space joint|position): trajectory CSV,
             metrics JSON and figures
  compare    both planners over the seed list: aggregated report files
  calibrate  joint-space buffer equivalent of the configured sigma_x

Every artifact lands under the configured output directory and is written
atomically, so a rerun with the same config overwrites deterministically
and a crash never leaves partial files.  Exit codes: 0 success, 2
configuration, 3 boundary mapping or calibration, 4 planning, 5 output
I/O.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

from . import config as cfg
from . import evaluation as ev
from . import joint_obstacle_map as jm
from . import roadmap_planner as rp
from . import workspace_scene as ws
from .errors import ConfigError, PlanningError
from .fileio import atomic_write_text

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MAPPING = 3
EXIT_PLANNING = 4
EXIT_IO = 5


class _CommandError(Exception):
    """Failure with a designated process exit code."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _build_mesh(scene, run: cfg.RunConfig) -> jm.BoundaryMesh:
    try:
        kin = jm.RcmKinematics(scene.port, run.arm)
        return jm.build_boundary(scene, kin, grid=run.grid)
    except PlanningError as exc:
        raise _CommandError(EXIT_MAPPING, f"boundary mapping failed: {exc}")


def _resolve_sigma_q(run: cfg.RunConfig, mesh, scene) -> tuple:
    """(sigma_q in radians, True when it came from calibration)."""
    if run.sigma_q_rad is not None:
        return run.sigma_q_rad, False
    try:
        result = ev.calibrate_sigma_q(mesh, run.arm, scene.port,
                                      run.sigma_x_mm)
    except PlanningError as exc:
        raise _CommandError(EXIT_MAPPING, f"calibration failed: {exc}")
    return result.sigma_q_rad, True


def _planner_params(run: cfg.RunConfig, space: str,
                    sigma_q: float) -> rp.PlannerParams:
    n = run.n_joint_nodes if space == "joint" else run.n_position_nodes
    return rp.PlannerParams(start=run.start_mm, goal=run.goal_mm, n_nodes=n,
                            sigma_q=sigma_q, sigma_x=run.sigma_x_mm)


def _out_path(run: cfg.RunConfig, *parts) -> str:
    path = os.path.join(run.out_dir, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def _degenerate_metrics(planner: str, seed: int, start, port) -> dict:
    # start == goal: a single-point path has an angle but no length
    try:
        psi = math.degrees(ev.insertion_angle(start, port))
    except PlanningError:
        psi = None
    return {"planner": planner, "seed": seed, "psi_ave_deg": psi,
            "psi_max_deg": psi, "dpsi_rms_deg_per_mm": 0.0,
            "dpsi_max_deg_per_mm": 0.0, "path_length_mm": 0.0}


def cmd_map(run: cfg.RunConfig) -> int:
    scene = run.build_scene()
    mesh = _build_mesh(scene, run)
    try:
        jm.export_mesh_obj(mesh, _out_path(run, "boundary_mesh.obj"))
        jm.export_mesh_sidecar(mesh, _out_path(run, "boundary_mesh.json"))
        ws.export_boundary_obj(scene, _out_path(run, "scene_boundary.obj"))
    except OSError as exc:
        raise _CommandError(EXIT_IO, f"cannot write mesh artifacts: {exc}")
    print(f"mapped {mesh.vertex_count} vertices, "
          f"{mesh.triangles.shape[0]} triangles, "
          f"{len(mesh.skipped)} rays skipped -> {run.out_dir}")
    return EXIT_OK


def cmd_plan(run: cfg.RunConfig, space: str, figures: bool) -> int:
    scene = run.build_scene()
    seed = run.seeds[0]
    if space == "joint":
        mesh = _build_mesh(scene, run)
        sigma_q, calibrated = _resolve_sigma_q(run, mesh, scene)
    else:
        sigma_q, calibrated = 0.0, False
    params = _planner_params(run, space, sigma_q)
    mapped = None
    try:
        if space == "joint":
            traj, mapped = rp.plan_joint_space(scene, run.arm, mesh, params,
                                               seed)
            curve = mapped
        else:
            traj = rp.plan_position_space(scene, params, seed)
            curve = traj
    except PlanningError as exc:
        raise _CommandError(EXIT_PLANNING, f"{space} planning failed: {exc}")

    report = None
    if traj.duration > 0.0:
        try:
            report = ev.path_metrics(curve, scene.port, planner=space,
                                     seed=seed)
        except PlanningError as exc:
            raise _CommandError(EXIT_PLANNING,
                                f"scoring the {space} plan failed: {exc}")
        metrics = report.as_dict()
    else:
        metrics = _degenerate_metrics(space, seed, run.start, scene.port)
    if space == "joint":
        metrics["sigma_q_deg"] = math.degrees(sigma_q)
        metrics["sigma_q_calibrated"] = calibrated

    try:
        rp.export_trajectory_csv(traj, _out_path(run, f"trajectory_{space}.csv"),
                                 mapped=mapped)
        atomic_write_text(_out_path(run, f"metrics_{space}.json"),
                          json.dumps(metrics, indent=2) + "\n")
        if figures and report is not None:
            from . import figures as figs
            figs.render_trajectory(scene, curve,
                                   _out_path(run, "figures",
                                             f"trajectory_{space}.png"),
                                   title=f"{space} plan, seed {seed}")
            figs.render_angle_profile(
                [report], _out_path(run, "figures",
                                    f"angle_profile_{space}.png"))
            if mapped is not None:
                figs.render_joint_profile(
                    mapped, _out_path(run, "figures", "joint_profile.png"))
    except OSError as exc:
        raise _CommandError(EXIT_IO, f"cannot write plan artifacts: {exc}")

    length = metrics["path_length_mm"]
    print(f"{space} plan seed {seed}: length {length:.3f} mm, "
          f"psi_ave {metrics['psi_ave_deg']} deg -> {run.out_dir}")
    return EXIT_OK


def cmd_compare(run: cfg.RunConfig, figures: bool) -> int:
    scene = run.build_scene()
    mesh = _build_mesh(scene, run)
    sigma_q, calibrated = _resolve_sigma_q(run, mesh, scene)
    params_joint = _planner_params(run, "joint", sigma_q)
    params_position = _planner_params(run, "position", sigma_q)
    try:
        report = ev.compare(scene, run.arm, mesh, params_joint, run.seeds,
                            position_params=params_position)
    except PlanningError as exc:
        raise _CommandError(EXIT_PLANNING, f"comparison failed: {exc}")

    table = (f"sigma_q = {math.degrees(sigma_q):.4f} deg "
             f"({'calibrated' if calibrated else 'configured'}), "
             f"sigma_x = {run.sigma_x_mm} mm, seeds = {list(run.seeds)}\n"
             + report.format_table() + "\n")
    try:
        ev.export_report_json(report, _out_path(run, "comparison.json"))
        atomic_write_text(_out_path(run, "comparison.txt"), table)
        for rec in report.records:
            if rec.report is None:
                continue
            ev.export_trace_csv(
                rec.report,
                _out_path(run, "traces",
                          f"trace_{rec.planner}_seed{rec.seed}.csv"))
        if figures:
            from . import figures as figs
            successful = [rec.report for rec in report.records
                          if rec.report is not None]
            if successful:
                figs.render_comparison(
                    report, _out_path(run, "figures",
                                      "comparison_metrics.png"))
                figs.render_angle_profile(
                    successful, _out_path(run, "figures",
                                          "angle_profiles.png"))
    except OSError as exc:
        raise _CommandError(EXIT_IO, f"cannot write comparison artifacts: "
                                     f"{exc}")

    print(table)
    if not report.reports("joint") and not report.reports("position"):
        raise _CommandError(EXIT_PLANNING,
                            "every planner run failed; see comparison.json")
    return EXIT_OK


def cmd_calibrate(run: cfg.RunConfig) -> int:
    scene = run.build_scene()
    mesh = _build_mesh(scene, run)
    try:
        result = ev.calibrate_sigma_q(mesh, run.arm, scene.port,
                                      run.sigma_x_mm)
    except PlanningError as exc:
        raise _CommandError(EXIT_MAPPING, f"calibration failed: {exc}")
    per_deg = result.per_triangle_rad * 180.0 / math.pi
    payload = {
        "sigma_x_mm": result.sigma_x_mm,
        "sigma_q_rad": result.sigma_q_rad,
        "sigma_q_deg": result.sigma_q_deg,
        "triangles_used": int(result.per_triangle_rad.size),
        "triangles_skipped": result.skipped,
        "per_triangle_deg": {
            "min": float(per_deg.min()),
            "mean": float(per_deg.mean()),
            "max": float(per_deg.max()),
        },
    }
    try:
        atomic_write_text(_out_path(run, "calibration.json"),
                          json.dumps(payload, indent=2) + "\n")
    except OSError as exc:
        raise _CommandError(EXIT_IO, f"cannot write calibration: {exc}")
    print(f"sigma_q({run.sigma_x_mm} mm) = {result.sigma_q_deg:.4f} deg "
          f"({result.skipped} triangles skipped) -> {run.out_dir}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trocarplan",
        description="Joint-space path planning for a port-constrained "
                    "surgical holder arm")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "map": "export the joint-space boundary mesh",
        "plan": "plan one trajectory and score it",
        "compare": "run both planners over the seed list",
        "calibrate": "calibrate the joint-space clearance buffer",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH",
                       help="JSON run configuration (defaults used if "
                            "omitted)")
        p.add_argument("--seed", type=int, metavar="N",
                       help="replace the configured seed list with this "
                            "single seed")
        p.add_argument("--out", metavar="DIR",
                       help="override the configured output directory")
        if name == "plan":
            p.add_argument("--space", required=True,
                           choices=("joint", "position"),
                           help="planning space")
        if name in ("plan", "compare"):
            p.add_argument("--no-figures", action="store_true",
                           help="skip PNG rendering")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        run = cfg.load_config(args.config) if args.config \
            else cfg.default_config()
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            run = dataclasses.replace(run, seeds=(args.seed,))
        if args.out:
            run = dataclasses.replace(run, out_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "map":
            return cmd_map(run)
        if args.command == "plan":
            return cmd_plan(run, args.space, not args.no_figures)
        if args.command == "compare":
            return cmd_compare(run, not args.no_figures)
        return cmd_calibrate(run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except PlanningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PLANNING
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
