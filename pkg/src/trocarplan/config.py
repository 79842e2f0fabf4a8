"""Versioned JSON run configuration for the batch front end.

Schema version 1.  Units are fixed at this boundary: lengths in
millimetres (``*_mm``), angles in degrees (``*_deg``); everything is
converted to radians internally.  Any field other than ``schema_version``
may be omitted and falls back to the benchmark defaults, so
``{"schema_version": 1}`` is a complete configuration.

Top-level fields::

    schema_version    must equal 1
    scene             "hemisphere" | "cholecystectomy" | custom mapping
    arm               arm geometry overrides (l2_mm, l3_mm, d_x_mm, d_z_mm,
                      forceps_length_mm, joint_limits_deg)
    n_joint_nodes     roadmap size for the joint-space planner
    n_position_nodes  roadmap size for the position-space baseline
    n_scene_samples   forbidden-boundary sample count for clearance queries
    grid              [n_theta, n_phi] boundary-mapping ray grid
    sigma_x_mm        position-space clearance buffer
    sigma_q_deg       joint-space buffer; null or absent means "calibrate"
    seeds             list of non-negative planner seeds
    start_mm, goal_mm tip start and goal points
    out_dir           directory that receives every artifact

A custom scene mapping has ``port_mm``, ``cavity`` (one primitive or a
list intersected together), ``organs`` (list of primitives) and an
optional ``ray_limit_mm``.  Primitives are ``{"type": "sphere",
"center_mm": [...], "radius_mm": r}``, ``{"type": "ellipsoid",
"center_mm": [...], "radii_mm": [...]}`` or ``{"type": "plane",
"anchor_mm": [...], "normal": [...]}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import arm_model
from . import workspace_scene as ws
from .errors import ConfigError, PlanningError

SCHEMA_VERSION = 1

_DEFAULTS = {
    "scene": "hemisphere",
    "arm": {},
    "n_joint_nodes": 1000,
    "n_position_nodes": 1000,
    "n_scene_samples": 5000,
    "grid": [30, 30],
    "sigma_x_mm": 5.0,
    "sigma_q_deg": None,
    "seeds": list(range(10)),
    "start_mm": [705.0, -26.0, -330.0],
    "goal_mm": [656.0, -26.0, -378.0],
    "out_dir": "out",
}

_ARM_KEYS = {"l2_mm", "l3_mm", "d_x_mm", "d_z_mm", "forceps_length_mm",
             "joint_limits_deg"}
_SCENE_KEYS = {"port_mm", "cavity", "organs", "ray_limit_mm"}
_BUILTIN_SCENES = ("hemisphere", "cholecystectomy")


@dataclass(frozen=True)
class RunConfig:
    """Validated run parameters; arrays come out in mm and radians."""

    scene_spec: object
    arm: arm_model.ArmGeometry
    n_joint_nodes: int
    n_position_nodes: int
    n_scene_samples: int
    grid: tuple
    sigma_x_mm: float
    sigma_q_deg: float | None
    seeds: tuple
    start_mm: tuple
    goal_mm: tuple
    out_dir: str

    @property
    def start(self) -> np.ndarray:
        return np.array(self.start_mm, dtype=float)

    @property
    def goal(self) -> np.ndarray:
        return np.array(self.goal_mm, dtype=float)

    @property
    def sigma_q_rad(self) -> float | None:
        if self.sigma_q_deg is None:
            return None
        return math.radians(self.sigma_q_deg)

    def build_scene(self) -> ws.Scene:
        """Instantiate the configured scene; geometry problems are config
        errors."""
        try:
            if self.scene_spec == "hemisphere":
                return ws.make_hemisphere_scene(n_samples=self.n_scene_samples,
                                                seed=0)
            if self.scene_spec == "cholecystectomy":
                return ws.make_cholecystectomy_scene(
                    n_samples=self.n_scene_samples, seed=0)
            return _custom_scene(self.scene_spec, self.n_scene_samples)
        except PlanningError as exc:
            raise ConfigError(f"scene: {exc}") from exc


def _fail(field: str, why: str):
    raise ConfigError(f"config field {field!r}: {why}")


def _as_int(value, field: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(field, "expected an integer")
    if value < minimum:
        _fail(field, f"must be at least {minimum}")
    return int(value)


def _as_number(value, field: str):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(field, "expected a number")
    if not math.isfinite(value):
        _fail(field, "must be finite")
    return float(value)


def _as_point(value, field: str) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        _fail(field, "expected a 3-element list")
    return tuple(_as_number(v, field) for v in value)


def _primitive(spec, field: str):
    if not isinstance(spec, dict):
        _fail(field, "primitive must be a mapping with a 'type'")
    kind = spec.get("type")
    try:
        if kind == "sphere":
            return ws.Sphere(_as_point(spec["center_mm"], field),
                             _as_number(spec["radius_mm"], field))
        if kind == "ellipsoid":
            return ws.Ellipsoid(_as_point(spec["center_mm"], field),
                                _as_point(spec["radii_mm"], field))
        if kind == "plane":
            return ws.Plane(_as_point(spec["anchor_mm"], field),
                            _as_point(spec["normal"], field))
    except KeyError as exc:
        _fail(field, f"primitive is missing {exc.args[0]!r}")
    except PlanningError as exc:
        _fail(field, str(exc))
    _fail(field, f"unknown primitive type {kind!r}")


def _custom_scene(spec: dict, n_samples: int) -> ws.Scene:
    unknown = set(spec) - _SCENE_KEYS
    if unknown:
        _fail("scene", f"unknown keys {sorted(unknown)}")
    if "port_mm" not in spec or "cavity" not in spec:
        _fail("scene", "custom scene needs 'port_mm' and 'cavity'")
    port = _as_point(spec["port_mm"], "scene.port_mm")
    cavity_spec = spec["cavity"]
    if isinstance(cavity_spec, list):
        parts = [_primitive(p, "scene.cavity") for p in cavity_spec]
        cavity = parts[0] if len(parts) == 1 else ws.Intersection(
            parts, tag="cavity")
    else:
        cavity = _primitive(cavity_spec, "scene.cavity")
    organs = [_primitive(p, "scene.organs")
              for p in spec.get("organs", [])]
    ray_limit = _as_number(spec.get("ray_limit_mm", 2000.0),
                           "scene.ray_limit_mm")
    return ws.assemble_scene(port, cavity, organs, n_samples=n_samples,
                             seed=0, ray_limit=ray_limit)


def parse_config(data) -> RunConfig:
    """Validate a decoded JSON mapping into a RunConfig."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(data) - set(_DEFAULTS) - {"schema_version"}
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")
    if "schema_version" not in data:
        raise ConfigError("config is missing 'schema_version'")
    if data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version "
                          f"{data['schema_version']!r}; expected "
                          f"{SCHEMA_VERSION}")
    merged = {**_DEFAULTS, **data}

    scene = merged["scene"]
    if isinstance(scene, str):
        if scene not in _BUILTIN_SCENES:
            _fail("scene", f"unknown builtin {scene!r}; expected one of "
                           f"{list(_BUILTIN_SCENES)}")
    elif not isinstance(scene, dict):
        _fail("scene", "expected a builtin name or a mapping")

    arm_spec = merged["arm"]
    if not isinstance(arm_spec, dict):
        _fail("arm", "expected a mapping of overrides")
    unknown = set(arm_spec) - _ARM_KEYS
    if unknown:
        _fail("arm", f"unknown keys {sorted(unknown)}")
    try:
        arm = arm_model.ArmGeometry.from_dict(arm_spec)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config field 'arm': {exc}") from exc

    grid = merged["grid"]
    if not isinstance(grid, (list, tuple)) or len(grid) != 2:
        _fail("grid", "expected [n_theta, n_phi]")
    grid = tuple(_as_int(g, "grid", 2) for g in grid)

    sigma_q = merged["sigma_q_deg"]
    if sigma_q is not None:
        sigma_q = _as_number(sigma_q, "sigma_q_deg")
        if sigma_q < 0.0:
            _fail("sigma_q_deg", "must be non-negative")
    sigma_x = _as_number(merged["sigma_x_mm"], "sigma_x_mm")
    if sigma_x < 0.0:
        _fail("sigma_x_mm", "must be non-negative")

    seeds = merged["seeds"]
    if not isinstance(seeds, list) or not seeds:
        _fail("seeds", "expected a non-empty list")
    seeds = tuple(_as_int(s, "seeds", 0) for s in seeds)

    out_dir = merged["out_dir"]
    if not isinstance(out_dir, str) or not out_dir:
        _fail("out_dir", "expected a non-empty path string")

    return RunConfig(
        scene_spec=scene,
        arm=arm,
        n_joint_nodes=_as_int(merged["n_joint_nodes"], "n_joint_nodes", 2),
        n_position_nodes=_as_int(merged["n_position_nodes"],
                                 "n_position_nodes", 2),
        n_scene_samples=_as_int(merged["n_scene_samples"],
                                "n_scene_samples", 4),
        grid=grid,
        sigma_x_mm=sigma_x,
        sigma_q_deg=sigma_q,
        seeds=seeds,
        start_mm=_as_point(merged["start_mm"], "start_mm"),
        goal_mm=_as_point(merged["goal_mm"], "goal_mm"),
        out_dir=out_dir,
    )


def load_config(path) -> RunConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(data)


def default_config() -> RunConfig:
    """The benchmark configuration used when no file is given."""
    return parse_config({"schema_version": SCHEMA_VERSION})
