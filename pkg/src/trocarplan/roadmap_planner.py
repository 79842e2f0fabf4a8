"""Sampled roadmaps and shortest paths in either planning space.

The same machinery serves both planners: rejection-sample free nodes (the
start and goal are always nodes 0 and 1), connect them with the edges of a
3D Delaunay triangulation, weight the edges with the space's cost function,
run Dijkstra, and smooth the winning node sequence with a natural cubic
spline.  Joint-space planning works in the reduced coordinates (q1, q2, q3)
and also returns the forward-kinematic image of the spline for evaluation
in position space.
"""

from __future__ import annotations

import heapq
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import Delaunay, QhullError

from . import arm_model
from . import riemannian_metric as rmetric
from . import workspace_scene as wscene
from .errors import DegenerateInput, NoSolution, RejectionBudgetExceeded, Unreachable
from .fileio import atomic_write_text
from .joint_obstacle_map import BoundaryMesh, RcmKinematics

_BUDGET_FACTOR = 1000       # rejection attempts allowed per requested node
_CLEARANCE_SAMPLES = 200    # spline samples for the post-hoc collision check


@dataclass(frozen=True)
class PlannerParams:
    """Shared settings of the two planners.

    start/goal are position-space points (mm) in both cases; the joint
    planner converts them through the inverse kinematics.  sigma_q is in
    radians, sigma_x in mm.
    """

    start: tuple
    goal: tuple
    n_nodes: int = 1000
    sigma_q: float = 0.0147
    sigma_x: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        object.__setattr__(self, "goal", tuple(float(v) for v in self.goal))
        if len(self.start) != 3 or len(self.goal) != 3:
            raise DegenerateInput("start and goal must be 3-vectors")
        if self.n_nodes < 2:
            raise DegenerateInput("a roadmap needs at least the two endpoints")
        if self.sigma_q < 0.0 or self.sigma_x < 0.0:
            raise DegenerateInput("barrier scales must be non-negative")

    @property
    def start_point(self) -> np.ndarray:
        return np.array(self.start)

    @property
    def goal_point(self) -> np.ndarray:
        return np.array(self.goal)


@dataclass(frozen=True, eq=False)
class Roadmap:
    """Undirected weighted graph over sampled free nodes."""

    space: str                  # "joint" | "position"
    nodes: np.ndarray           # (n, 3)
    edges: tuple                # ((i, j), ...) with i < j
    costs: np.ndarray           # (m,) nonnegative, +inf allowed
    start_index: int
    goal_index: int

    def __post_init__(self):
        if self.space not in ("joint", "position"):
            raise DegenerateInput(f"unknown space tag {self.space!r}")
        if len(self.edges) != self.costs.shape[0]:
            raise DegenerateInput("edge and cost counts differ")
        if any(i == j for i, j in self.edges):
            raise DegenerateInput("self-loops are not allowed")
        if np.any(self.costs < 0.0):
            raise DegenerateInput("edge costs must be non-negative")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Natural cubic spline through the planned knots.

    The parameter runs over cumulative chord length; a single-knot
    trajectory (start equal to goal) is the constant curve of length 0.
    """

    space: str
    knots: np.ndarray           # (k, 3)
    params: np.ndarray          # (k,) strictly increasing chord parameters
    spline: object              # CubicSpline or None when constant

    @property
    def duration(self) -> float:
        return float(self.params[-1]) if self.params.shape[0] else 0.0

    def evaluate(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        if self.spline is None:
            return np.broadcast_to(self.knots[0], t.shape + (3,)).copy()
        return self.spline(t)

    def derivative(self, t, order: int = 1):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        if self.spline is None:
            return np.zeros(t.shape + (3,))
        return self.spline.derivative(order)(t)

    def c2_max_jump(self) -> float:
        """Largest second-derivative discontinuity across interior knots."""
        if self.spline is None or self.knots.shape[0] < 3:
            return 0.0
        c = self.spline.c                      # (4, k-1, 3)
        h = np.diff(self.params)
        left = 6.0 * c[0, :-1].T * h[:-1] + 2.0 * c[1, :-1].T
        right = 2.0 * c[1, 1:].T
        return float(np.max(np.abs(left - right)))

    def arc_length_table(self, n: int = 400):
        """(t, cumulative arc length) sampled on a uniform parameter grid."""
        t = np.linspace(0.0, self.duration, max(2, n))
        pts = self.evaluate(t)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        return t, np.concatenate([[0.0], np.cumsum(seg)])


class MappedJointCurve:
    """Forward-kinematic image of a joint-space trajectory."""

    def __init__(self, trajectory: Trajectory, port, arm: arm_model.ArmGeometry):
        if trajectory.space != "joint":
            raise DegenerateInput("mapped curve requires a joint-space trajectory")
        self.trajectory = trajectory
        self.port = np.asarray(port, dtype=float)
        self.arm = arm
        self._kin = RcmKinematics(self.port, arm)

    @property
    def duration(self) -> float:
        return self.trajectory.duration

    def lift5(self, t) -> np.ndarray:
        qr = np.atleast_2d(self.trajectory.evaluate(t))
        return np.array([self._kin.lift(row) for row in qr])

    def evaluate(self, t) -> np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        qr = np.atleast_2d(self.trajectory.evaluate(t_arr))
        tips = np.array([self._kin.map_to_position(row) for row in qr])
        return tips.reshape(t_arr.shape + (3,))

    def derivative(self, t) -> np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        qr = np.atleast_2d(self.trajectory.evaluate(t_arr))
        qdot = np.atleast_2d(self.trajectory.derivative(t_arr))
        out = np.array([self._kin.jacobian(q) @ v for q, v in zip(qr, qdot)])
        return out.reshape(t_arr.shape + (3,))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _position_sampler(scene: wscene.Scene, rng):
    lo = scene.boundary_samples.min(axis=0)
    hi = scene.boundary_samples.max(axis=0)

    def draw():
        x = lo + (hi - lo) * rng.random(3)
        return x if scene.is_free(x) else None
    return draw


def _joint_sampler(scene: wscene.Scene, port, arm: arm_model.ArmGeometry, rng):
    lims = arm.joint_limits[:3]
    kin = RcmKinematics(np.asarray(port, dtype=float), arm)

    def draw():
        qr = lims[:, 0] + (lims[:, 1] - lims[:, 0]) * rng.random(3)
        try:
            tip = kin.map_to_position(qr)
        except NoSolution:
            return None
        return qr if scene.is_free(tip) else None
    return draw


def sample_free(n: int, space: str, scene: wscene.Scene, start, goal, *,
                port=None, arm: arm_model.ArmGeometry | None = None,
                seed: int = 0) -> np.ndarray:
    """n collision-free nodes; rows 0 and 1 are the exact start and goal.

    Joint-space nodes are reduced configurations whose lift stays within the
    joint limits and whose tip lies in free space.  Gives up after 1000*n
    rejected draws.
    """
    if n < 2:
        raise DegenerateInput("need at least the two endpoints")
    if space not in ("joint", "position"):
        raise DegenerateInput(f"unknown space tag {space!r}")
    rng = np.random.default_rng(seed)
    if space == "position":
        draw = _position_sampler(scene, rng)
    else:
        if port is None or arm is None:
            raise DegenerateInput("joint-space sampling needs port and arm")
        draw = _joint_sampler(scene, port, arm, rng)

    nodes = [np.asarray(start, dtype=float), np.asarray(goal, dtype=float)]
    attempts = 0
    budget = _BUDGET_FACTOR * n
    while len(nodes) < n:
        if attempts >= budget:
            raise RejectionBudgetExceeded(
                f"{len(nodes)}/{n} free samples after {budget} draws")
        attempts += 1
        x = draw()
        if x is not None:
            nodes.append(x)
    return np.array(nodes)


# ---------------------------------------------------------------------------
# Graph construction and search
# ---------------------------------------------------------------------------

def delaunay3_cells(points) -> np.ndarray:
    """Tetrahedra of the 3D Delaunay triangulation as an (m, 4) index array.

    Coplanar or cospherical inputs are retried with qhull's deterministic
    joggle; exact duplicate points are rejected.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 4:
        raise DegenerateInput("Delaunay needs at least 4 points in 3D")
    if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
        raise DegenerateInput("duplicate points in Delaunay input")
    try:
        tri = Delaunay(pts)
    except QhullError:
        try:
            tri = Delaunay(pts, qhull_options="QJ")
        except QhullError as exc:
            raise DegenerateInput(f"degenerate point set: {exc}") from exc
    return np.sort(tri.simplices, axis=1)


def delaunay3(points) -> tuple:
    """Edges of the 3D Delaunay tetrahedralization, as sorted (i, j) pairs."""
    edges = set()
    for tet in delaunay3_cells(points):
        for i in range(4):
            for j in range(i + 1, 4):
                edges.add((int(tet[i]), int(tet[j])))
    return tuple(sorted(edges))


def build_roadmap(space: str, nodes: np.ndarray, cost_fn, *,
                  start_index: int = 0, goal_index: int = 1) -> Roadmap:
    """Delaunay edges weighted by cost_fn(a, b); node pairs below 4 nodes
    fall back to the complete graph."""
    nodes = np.asarray(nodes, dtype=float)
    if nodes.shape[0] < 4:
        edges = tuple((i, j) for i in range(nodes.shape[0])
                      for j in range(i + 1, nodes.shape[0]))
    else:
        edges = delaunay3(nodes)
    costs = np.array([cost_fn(nodes[i], nodes[j]) for i, j in edges])
    return Roadmap(space=space, nodes=nodes, edges=edges, costs=costs,
                   start_index=start_index, goal_index=goal_index)


def dijkstra(roadmap: Roadmap, src: int | None = None,
             dst: int | None = None) -> list:
    """Minimum-cost node index sequence; +inf edges are never traversed."""
    src = roadmap.start_index if src is None else src
    dst = roadmap.goal_index if dst is None else dst
    n = roadmap.nodes.shape[0]
    adj = [[] for _ in range(n)]
    for (i, j), c in zip(roadmap.edges, roadmap.costs):
        if math.isinf(c):
            continue
        adj[i].append((j, float(c)))
        adj[j].append((i, float(c)))
    dist = np.full(n, math.inf)
    prev = np.full(n, -1, dtype=int)
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        if u == dst:
            break
        for v, c in adj[u]:
            nd = d + c
            if nd < dist[v]:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if math.isinf(dist[dst]):
        raise Unreachable(f"no finite-cost path from node {src} to node {dst}")
    path = [dst]
    while path[-1] != src:
        path.append(int(prev[path[-1]]))
    return path[::-1]


def path_cost(roadmap: Roadmap, path) -> float:
    """Total cost of a node index sequence over the roadmap's edges."""
    lookup = {e: float(c) for e, c in zip(roadmap.edges, roadmap.costs)}
    total = 0.0
    for a, b in zip(path[:-1], path[1:]):
        key = (a, b) if a < b else (b, a)
        if key not in lookup:
            raise DegenerateInput(f"path step {key} is not a roadmap edge")
        total += lookup[key]
    return total


# ---------------------------------------------------------------------------
# Spline smoothing
# ---------------------------------------------------------------------------

def spline_fit(knots, start, goal, space: str = "joint") -> Trajectory:
    """Natural cubic spline through the knots, exact at the endpoints.

    The first and last knots are replaced by the exact start and goal;
    consecutive duplicate knots are collapsed with a warning.
    """
    pts = np.atleast_2d(np.asarray(knots, dtype=float)).copy()
    if pts.shape[0] < 1 or pts.shape[1] != 3:
        raise DegenerateInput("spline needs at least one 3D knot")
    pts[0] = np.asarray(start, dtype=float)
    pts[-1] = np.asarray(goal, dtype=float)

    kept = [pts[0]]
    dropped = 0
    for row in pts[1:]:
        if np.array_equal(row, kept[-1]):
            dropped += 1
            continue
        kept.append(row)
    if dropped:
        warnings.warn(f"collapsed {dropped} duplicate consecutive knots")
    pts = np.array(kept)

    if pts.shape[0] == 1:
        return Trajectory(space=space, knots=pts, params=np.zeros(1), spline=None)
    chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0),
                                                            axis=1))])
    spline = CubicSpline(chord, pts, bc_type="natural")
    return Trajectory(space=space, knots=pts, params=chord, spline=spline)


# ---------------------------------------------------------------------------
# End-to-end planners
# ---------------------------------------------------------------------------

def _warn_if_colliding(scene: wscene.Scene, curve, label: str) -> None:
    # post-hoc clearance check; the spline may cut corners the roadmap avoided
    t = np.linspace(0.0, curve.duration, _CLEARANCE_SAMPLES)
    free = np.array([scene.is_free(x) for x in np.atleast_2d(curve.evaluate(t))])
    if free.all():
        return
    bad = np.flatnonzero(~free)
    arcs = []
    run_start = bad[0]
    prev = bad[0]
    for b in bad[1:]:
        if b != prev + 1:
            arcs.append((t[run_start], t[prev]))
            run_start = b
        prev = b
    arcs.append((t[run_start], t[prev]))
    spans = ", ".join(f"[{a:.3f}, {b:.3f}]" for a, b in arcs)
    warnings.warn(f"{label} spline leaves free space on parameter arcs {spans}")


def plan_joint_space(scene: wscene.Scene, arm: arm_model.ArmGeometry,
                     mesh: BoundaryMesh, params: PlannerParams,
                     seed: int = 0):
    """Plan in reduced joint coordinates; returns (trajectory, mapped curve)."""
    port = scene.port
    q_start = arm_model.inverse_kinematics(params.start_point, port, arm).as_array()[:3]
    q_goal = arm_model.inverse_kinematics(params.goal_point, port, arm).as_array()[:3]

    if np.array_equal(params.start_point, params.goal_point):
        traj = Trajectory(space="joint", knots=q_start[None, :],
                          params=np.zeros(1), spline=None)
        return traj, MappedJointCurve(traj, port, arm)

    nodes = sample_free(params.n_nodes, "joint", scene, q_start, q_goal,
                        port=port, arm=arm, seed=seed)

    def cost(qa, qb):
        try:
            return rmetric.edge_cost(qa, qb, mesh, port, arm, params.sigma_q)
        except NoSolution:
            return math.inf      # midpoint fell off the reachable sheet

    roadmap = build_roadmap("joint", nodes, cost)
    path = dijkstra(roadmap)
    traj = spline_fit(roadmap.nodes[path], q_start, q_goal, space="joint")
    mapped = MappedJointCurve(traj, port, arm)
    _warn_if_colliding(scene, mapped, "joint-space")
    return traj, mapped


def plan_position_space(scene: wscene.Scene, params: PlannerParams,
                        seed: int = 0) -> Trajectory:
    """Plan straight in position space with the distance-inflated cost."""
    start = params.start_point
    goal = params.goal_point
    if not scene.is_free(start) or not scene.is_free(goal):
        raise DegenerateInput("start and goal must lie in free space")
    if np.array_equal(start, goal):
        return Trajectory(space="position", knots=start[None, :],
                          params=np.zeros(1), spline=None)

    nodes = sample_free(params.n_nodes, "position", scene, start, goal,
                        seed=seed)
    roadmap = build_roadmap(
        "position", nodes,
        lambda xa, xb: wscene.baseline_edge_cost(xa, xb, scene, params.sigma_x))
    path = dijkstra(roadmap)
    traj = spline_fit(roadmap.nodes[path], start, goal, space="position")
    _warn_if_colliding(scene, traj, "position-space")
    return traj


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def export_trajectory_csv(trajectory: Trajectory, path, *,
                          mapped: MappedJointCurve | None = None,
                          samples: int = 200) -> None:
    """CSV with columns t, q1..q5 (deg), x, y, z (mm).

    Joint trajectories need the mapped curve for the tip columns; position
    trajectories leave the joint columns empty.  A zero-length trajectory
    collapses to a single row.
    """
    if trajectory.space == "joint" and mapped is None:
        raise DegenerateInput("joint trajectory export needs the mapped curve")
    if trajectory.duration > 0.0:
        t = np.linspace(0.0, trajectory.duration, samples)
    else:
        t = np.array([0.0])
    rows = ["t,q1_deg,q2_deg,q3_deg,q4_deg,q5_deg,x_mm,y_mm,z_mm"]
    if trajectory.space == "joint":
        lifted = np.degrees(mapped.lift5(t))
        tips = np.atleast_2d(mapped.evaluate(t))
        for ti, q, x in zip(t, lifted, tips):
            rows.append(f"{ti:.9f}," + ",".join(f"{v:.9f}" for v in q)
                        + "," + ",".join(f"{v:.9f}" for v in x))
    else:
        tips = np.atleast_2d(trajectory.evaluate(t))
        for ti, x in zip(t, tips):
            rows.append(f"{ti:.9f},,,,,," + ",".join(f"{v:.9f}" for v in x))
    atomic_write_text(path, "\n".join(rows) + "\n")


def export_roadmap_json(roadmap: Roadmap, path) -> None:
    """Nodes, edges and costs as JSON; infinite costs serialize as null."""
    payload = {
        "space": roadmap.space,
        "start_index": roadmap.start_index,
        "goal_index": roadmap.goal_index,
        "nodes": [[float(v) for v in row] for row in roadmap.nodes],
        "edges": [[int(i), int(j)] for i, j in roadmap.edges],
        "costs": [None if math.isinf(c) else float(c) for c in roadmap.costs],
    }
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")
