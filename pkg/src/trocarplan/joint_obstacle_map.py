"""Joint-space image of the forbidden-region boundary.

Rays from the port over a (theta, phi) grid locate boundary points in
position space; inverse kinematics pulls each point back to the reduced
joint coordinates (q1, q2, q3).  Delaunay triangulation of the pulled-back
cloud, restricted to its surface, yields a piecewise-linear approximation of
the joint-space boundary.  Per-vertex curvature of the pulled-back implicit
surface drives segmentation into convex patches, which in turn power the
greedy nearest-forbidden-configuration search used by the planner's barrier
terms.

Directions that miss the boundary or whose boundary point has no valid arm
configuration are skipped and recorded (strict mode raises instead); full
grid coverage is not achievable for every scene/arm pairing.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, QhullError

from . import arm_model
from .errors import (DegenerateInput, EmptyMesh, IKFailure, NoHit, NoSolution,
                     SingularJacobian, ZeroGradient)
from .fileio import atomic_write_text
from .workspace_scene import Scene, _ray_cast_batch

_POLE_SIN_TOL = 1e-12
_IK_FIDELITY_TOL = 1e-6    # mm
_SINGULAR_DET_TOL = 1e-12
_ZERO_GRAD_TOL = 1e-12
_EPS_HINGE = 1e-6          # edge-convexity tolerance


class RcmKinematics:
    """Port-constrained arm as a map between reduced joints and tip points."""

    def __init__(self, port, geometry: arm_model.ArmGeometry):
        self.port = np.asarray(port, dtype=float)
        self.geometry = geometry

    def map_to_position(self, qr) -> np.ndarray:
        q = arm_model.lift(qr, self.port, self.geometry)
        tip, _ = arm_model.forward_kinematics(q, self.geometry)
        return tip

    def solve_reduced(self, x) -> np.ndarray:
        q = arm_model.inverse_kinematics(x, self.port, self.geometry)
        return q.as_array()[:3]

    def lift(self, qr) -> np.ndarray:
        return arm_model.lift(qr, self.port, self.geometry).as_array()

    def jacobian(self, qr) -> np.ndarray:
        return arm_model.lifted_jacobian(qr, self.port, self.geometry)

    def second_derivatives(self, qr) -> np.ndarray:
        return arm_model.lifted_second_derivatives(qr, self.port, self.geometry)


class IdentityKinematics:
    """Stub map q = x used to test pulled-back quantities in closed form."""

    def map_to_position(self, qr) -> np.ndarray:
        return np.asarray(qr, dtype=float).copy()

    def solve_reduced(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float).copy()

    def lift(self, qr) -> np.ndarray:
        qr = np.asarray(qr, dtype=float)
        return np.concatenate([qr, [0.0, 0.0]])

    def jacobian(self, qr) -> np.ndarray:
        return np.eye(3)

    def second_derivatives(self, qr) -> np.ndarray:
        return np.zeros((3, 3, 3))


@dataclass(frozen=True)
class CurvatureSample:
    """Gaussian/mean curvature of the pulled-back surface at a vertex."""

    gaussian: float
    mean: float
    nonconcave: bool


@dataclass(frozen=True, eq=False)
class BoundaryMesh:
    """Immutable joint-space boundary: vertices, surface mesh, patches."""

    reduced: np.ndarray          # (n, 3) q1..q3
    lifted: np.ndarray           # (n, 5) full configurations
    theta: np.ndarray            # (n,) source direction
    phi: np.ndarray
    radius: np.ndarray           # (n,) ray hit distance, mm
    position: np.ndarray         # (n, 3) boundary point in position space
    normals: np.ndarray          # (n, 3) pulled-back unit normals (into free)
    triangles: np.ndarray        # (m, 3) surface faces
    adjacency: tuple             # per-vertex neighbors along surface faces
    walk_adjacency: tuple        # denser per-vertex neighbors (all tet edges)
    curvature: tuple             # per-vertex CurvatureSample
    patch_id: np.ndarray         # (n,) labels; singletons are residual
    patch_seeds: dict            # label -> seed vertex index
    skipped: tuple               # ((theta, phi, reason), ...)
    _patch_vertices: dict = field(repr=False)
    _residual: np.ndarray = field(repr=False)

    @property
    def vertex_count(self) -> int:
        return self.reduced.shape[0]

    def vertex_config(self, i: int) -> arm_model.JointConfig:
        return arm_model.JointConfig(*self.lifted[i])


# ---------------------------------------------------------------------------
# Curvature of the pulled-back surface
# ---------------------------------------------------------------------------

def pullback_frame(qr, x, scene: Scene, kinematics):
    """Oriented gradient and Hessian of F(map(q)) at a boundary vertex."""
    surf = scene.surface_at(x)
    gx = surf.grad(x)
    hx = surf.hess(x)
    jac = kinematics.jacobian(qr)
    if abs(float(np.linalg.det(jac))) < _SINGULAR_DET_TOL:
        raise SingularJacobian("pulled-back frame undefined: singular kinematic Jacobian")
    g = jac.T @ gx
    second = kinematics.second_derivatives(qr)
    h = jac.T @ hx @ jac + np.einsum("k,kij->ij", gx, second)
    return g, 0.5 * (h + h.T)


def curvature_from_frame(g: np.ndarray, h: np.ndarray) -> CurvatureSample:
    norm = float(np.linalg.norm(g))
    if norm < _ZERO_GRAD_TOL:
        raise ZeroGradient("implicit-surface gradient vanished at vertex")
    bordered = np.zeros((4, 4))
    bordered[:3, :3] = h
    bordered[:3, 3] = g
    bordered[3, :3] = g
    gaussian = -float(np.linalg.det(bordered)) / norm ** 4
    mean = (norm ** 2 * float(np.trace(h)) - float(g @ h @ g)) / (2.0 * norm ** 3)
    return CurvatureSample(gaussian, mean, gaussian >= 0.0 and mean >= 0.0)


def curvature_at(mesh: BoundaryMesh, index: int, scene: Scene, kinematics) -> CurvatureSample:
    g, h = pullback_frame(mesh.reduced[index], mesh.position[index], scene, kinematics)
    return curvature_from_frame(g, h)


# ---------------------------------------------------------------------------
# Patch segmentation
# ---------------------------------------------------------------------------

def _adjacency_from_triangles(n_vertices: int, triangles: np.ndarray) -> tuple:
    neigh = [set() for _ in range(n_vertices)]
    for a, b, c in triangles:
        neigh[a].update((b, c))
        neigh[b].update((a, c))
        neigh[c].update((a, b))
    return tuple(tuple(sorted(s)) for s in neigh)


def segment_convex_patches(points: np.ndarray, adjacency: tuple,
                           normals: np.ndarray, nonconcave) -> tuple:
    """Region-grow convex patches; returns (labels, seeds by label).

    Two neighbors share a patch iff both are nonconcave and the hinge of
    their normals across the edge is convex within tolerance.  Concave
    vertices end up as singleton residual patches.
    """
    n = points.shape[0]
    nonconcave = np.asarray(nonconcave, dtype=bool)
    labels = np.full(n, -1, dtype=int)
    next_label = 0
    for start in range(n):
        if labels[start] >= 0:
            continue
        labels[start] = next_label
        if nonconcave[start]:
            stack = [start]
            while stack:
                u = stack.pop()
                for v in adjacency[u]:
                    if labels[v] >= 0 or not nonconcave[v]:
                        continue
                    hinge = float((normals[u] - normals[v]) @ (points[u] - points[v]))
                    if hinge < -_EPS_HINGE:
                        continue
                    labels[v] = next_label
                    stack.append(v)
        next_label += 1

    seeds = {}
    for label in range(next_label):
        members = np.nonzero(labels == label)[0]
        centroid = points[members].mean(axis=0)
        dist = np.linalg.norm(points[members] - centroid, axis=1)
        seeds[label] = int(members[int(np.argmin(dist))])
    return labels, seeds


# ---------------------------------------------------------------------------
# Mesh construction
# ---------------------------------------------------------------------------

def _grid_directions(n_theta: int, n_phi: int):
    """(theta, phi) pairs with the duplicate pole collapsed to phi = 0."""
    thetas = np.linspace(math.pi / 2, math.pi, n_theta)
    phis = np.linspace(0.0, 2.0 * math.pi, n_phi, endpoint=False)
    pairs = []
    for th in thetas:
        if abs(math.sin(th)) < _POLE_SIN_TOL:
            pairs.append((float(th), 0.0))
        else:
            pairs.extend((float(th), float(ph)) for ph in phis)
    return pairs


def _surface_triangles(points: np.ndarray, scene: Scene, kinematics):
    """Surface faces and tetrahedral edges of the Delaunay complex.

    A tetrahedron is 'free' when the kinematic image of its centroid lies in
    the free region; surface faces are hull faces plus interfaces between
    free and non-free tetrahedra.  All tetrahedral edges come back as a
    denser graph for the greedy walk.
    """
    try:
        tets = Delaunay(points).simplices
    except QhullError as exc:
        raise DegenerateInput(f"boundary cloud not triangulable: {exc}") from exc

    free = np.zeros(tets.shape[0], dtype=bool)
    for t, tet in enumerate(tets):
        centroid = points[tet].mean(axis=0)
        try:
            x = kinematics.map_to_position(centroid)
        except NoSolution:
            continue
        free[t] = bool(scene.value(x) < 0.0)

    faces = {}
    for t, tet in enumerate(tets):
        for drop in range(4):
            face = tuple(sorted(np.delete(tet, drop)))
            faces.setdefault(face, []).append(t)
    surface = []
    for face, owners in faces.items():
        if len(owners) == 1 or free[owners[0]] != free[owners[1]]:
            surface.append(face)
    surface.sort()

    edges = [set() for _ in range(points.shape[0])]
    for tet in tets:
        for i in range(4):
            for j in range(i + 1, 4):
                edges[tet[i]].add(int(tet[j]))
                edges[tet[j]].add(int(tet[i]))
    walk = tuple(tuple(sorted(s)) for s in edges)
    return np.array(surface, dtype=int).reshape(-1, 3), walk


def build_boundary(scene: Scene, kinematics, grid=(30, 30), *,
                   strict: bool = False) -> BoundaryMesh:
    """Map the boundary grid into joint space and mesh it.

    grid = (n_theta, n_phi) over [pi/2, pi] x [0, 2*pi); must be >= (4, 8).
    Non-strict builds skip unmappable directions and record them.
    """
    n_theta, n_phi = grid
    if n_theta < 4 or n_phi < 8:
        raise DegenerateInput(f"grid {grid} below the minimum (4, 8)")

    pairs = _grid_directions(n_theta, n_phi)
    units = np.array([[math.sin(th) * math.cos(ph),
                       math.sin(th) * math.sin(ph),
                       math.cos(th)] for th, ph in pairs])
    radii = _ray_cast_batch(scene, units)

    rows = {"reduced": [], "lifted": [], "theta": [], "phi": [],
            "radius": [], "position": []}
    skipped = []
    seen = {}
    for (th, ph), unit, r in zip(pairs, units, radii):
        if math.isnan(r):
            if strict:
                raise NoHit(f"grid ray (theta={th:.6f}, phi={ph:.6f}) has no boundary hit")
            skipped.append((th, ph, "no boundary hit"))
            continue
        x = scene.port + r * unit
        try:
            qr = kinematics.solve_reduced(x)
            x_back = kinematics.map_to_position(qr)
        except NoSolution as exc:
            if strict:
                raise IKFailure(f"inverse kinematics failed at grid direction "
                                f"(theta={th:.6f}, phi={ph:.6f}): {exc}",
                                theta=th, phi=ph) from exc
            skipped.append((th, ph, f"inverse kinematics: {exc}"))
            continue
        if float(np.linalg.norm(x_back - x)) > _IK_FIDELITY_TOL:
            msg = "inverse kinematics fidelity above 1e-6 mm"
            if strict:
                raise IKFailure(msg + f" at (theta={th:.6f}, phi={ph:.6f})",
                                theta=th, phi=ph)
            skipped.append((th, ph, msg))
            continue
        key = tuple(qr.round(decimals=12))
        if key in seen:
            continue
        seen[key] = True
        rows["reduced"].append(qr)
        rows["lifted"].append(kinematics.lift(qr))
        rows["theta"].append(th)
        rows["phi"].append(ph)
        rows["radius"].append(float(r))
        rows["position"].append(x)

    reduced = np.array(rows["reduced"]).reshape(-1, 3)
    if reduced.shape[0] < 5:
        raise EmptyMesh(f"only {reduced.shape[0]} mappable grid directions; "
                        "cannot triangulate a boundary")
    position = np.array(rows["position"])

    triangles, walk_adjacency = _surface_triangles(reduced, scene, kinematics)
    adjacency = _adjacency_from_triangles(reduced.shape[0], triangles)

    normals = np.empty_like(reduced)
    curvature = []
    for i in range(reduced.shape[0]):
        g, h = pullback_frame(reduced[i], position[i], scene, kinematics)
        normals[i] = g / np.linalg.norm(g)
        curvature.append(curvature_from_frame(g, h))
    nonconcave = np.array([c.nonconcave for c in curvature])

    patch_id, patch_seeds = segment_convex_patches(reduced, adjacency, normals,
                                                   nonconcave)
    patch_vertices = {label: np.nonzero(patch_id == label)[0]
                      for label in patch_seeds}
    residual = np.array(sorted(
        int(v[0]) for v in patch_vertices.values() if v.shape[0] == 1), dtype=int)

    return BoundaryMesh(
        reduced=reduced, lifted=np.array(rows["lifted"]),
        theta=np.array(rows["theta"]), phi=np.array(rows["phi"]),
        radius=np.array(rows["radius"]), position=position,
        normals=normals, triangles=triangles, adjacency=adjacency,
        walk_adjacency=walk_adjacency, curvature=tuple(curvature),
        patch_id=patch_id, patch_seeds=patch_seeds, skipped=tuple(skipped),
        _patch_vertices=patch_vertices, _residual=residual)


# ---------------------------------------------------------------------------
# Nearest forbidden configuration
# ---------------------------------------------------------------------------

def nearest_forbidden_bruteforce(qr, mesh: BoundaryMesh):
    """Exhaustive nearest boundary vertex: (vertex reduced coords, distance)."""
    if mesh.vertex_count == 0:
        raise EmptyMesh("nearest-forbidden query on an empty mesh")
    qr = np.asarray(qr, dtype=float)
    d = np.linalg.norm(mesh.reduced - qr, axis=1)
    i = int(np.argmin(d))
    return mesh.reduced[i].copy(), float(d[i])


def nearest_forbidden_greedy(qr, mesh: BoundaryMesh):
    """Per-patch greedy descent plus exhaustive scan of residual vertices."""
    if mesh.vertex_count == 0:
        raise EmptyMesh("nearest-forbidden query on an empty mesh")
    qr = np.asarray(qr, dtype=float)

    best_idx = -1
    best_d = math.inf
    if mesh._residual.shape[0]:
        pts = mesh.reduced[mesh._residual]
        d = np.linalg.norm(pts - qr, axis=1)
        j = int(np.argmin(d))
        best_idx = int(mesh._residual[j])
        best_d = float(d[j])

    for label, members in mesh._patch_vertices.items():
        if members.shape[0] <= 1:
            continue
        current = mesh.patch_seeds[label]
        d_cur = float(np.linalg.norm(mesh.reduced[current] - qr))
        while True:
            move = -1
            for v in mesh.walk_adjacency[current]:
                if mesh.patch_id[v] != label:
                    continue
                d_v = float(np.linalg.norm(mesh.reduced[v] - qr))
                if d_v < d_cur:
                    d_cur = d_v
                    move = v
            if move < 0:
                break
            current = move
        if d_cur < best_d:
            best_d = d_cur
            best_idx = current
    return mesh.reduced[best_idx].copy(), best_d


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def export_mesh_obj(mesh: BoundaryMesh, path) -> None:
    """Surface mesh as OBJ; vertex coordinates are (q1, q2, q3) in degrees."""
    lines = ["# joint-space boundary mesh, coordinates in degrees"]
    for q in np.degrees(mesh.reduced):
        lines.append(f"v {q[0]:.9f} {q[1]:.9f} {q[2]:.9f}")
    for a, b, c in mesh.triangles:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def export_mesh_sidecar(mesh: BoundaryMesh, path) -> None:
    """Patch labels, curvature samples and skip report as JSON."""
    payload = {
        "vertex_count": mesh.vertex_count,
        "patch_id": mesh.patch_id.tolist(),
        "patch_seeds": {str(k): int(v) for k, v in mesh.patch_seeds.items()},
        "curvature": [
            {"gaussian": c.gaussian, "mean": c.mean, "nonconcave": c.nonconcave}
            for c in mesh.curvature
        ],
        "skipped": [
            {"theta": th, "phi": ph, "reason": reason}
            for th, ph, reason in mesh.skipped
        ],
    }
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")
