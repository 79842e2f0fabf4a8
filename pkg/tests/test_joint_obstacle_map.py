import json
import math

import numpy as np
import pytest

from trocarplan import arm_model as am
from trocarplan import joint_obstacle_map as jm
from trocarplan import workspace_scene as ws
from trocarplan.errors import (
    DegenerateInput,
    EmptyMesh,
    IKFailure,
    NoHit,
    NoSolution,
    SingularJacobian,
    ZeroGradient,
)

ORIGIN = np.array([0.0, 0.0, 0.0])
PORT = np.array([750.0, 0.0, -300.0])


def ball_scene(radius=200.0):
    """Free ball around the origin, no organs; trivial under identity maps."""
    return ws.assemble_scene(ORIGIN, ws.Sphere(ORIGIN, radius), [],
                             n_samples=64, seed=0)


def organ_scene(center, organ_radius, cavity_radius=200.0):
    return ws.assemble_scene(ORIGIN, ws.Sphere(ORIGIN, cavity_radius),
                             [ws.Sphere(np.asarray(center, dtype=float), organ_radius)],
                             n_samples=64, seed=0)


class FussyKinematics(jm.IdentityKinematics):
    """Identity map that refuses points below a z threshold."""

    def __init__(self, z_min=-math.inf):
        self.z_min = z_min

    def solve_reduced(self, x):
        x = np.asarray(x, dtype=float)
        if x[2] < self.z_min:
            raise NoSolution("below the allowed band")
        return x.copy()


class DriftingKinematics(jm.IdentityKinematics):
    """Round trip lands 1e-3 mm away from the requested point."""

    def solve_reduced(self, x):
        return np.asarray(x, dtype=float) + np.array([1e-3, 0.0, 0.0])


# -- curvature in closed form --------------------------------------------------

def test_cavity_wall_curvature_identity_map():
    radius = 200.0
    sc = ball_scene(radius)
    mesh = jm.build_boundary(sc, jm.IdentityKinematics(), grid=(10, 12))
    assert mesh.skipped == ()
    for c in mesh.curvature:
        assert abs(c.gaussian - 1.0 / radius**2) <= 1e-6 / radius**2
        assert abs(c.mean + 1.0 / radius) <= 1e-6 / radius
        assert not c.nonconcave          # hollow wall curves away from free space


def test_organ_sphere_curvature_identity_map():
    r = 40.0
    sc = organ_scene([0.0, 0.0, -100.0], r)
    mesh = jm.build_boundary(sc, jm.IdentityKinematics(), grid=(14, 16))
    organ = sc.organs[0]
    on_organ = np.abs(organ.value(mesh.position)) < 1e-9 * r**2
    assert on_organ.sum() >= 10
    for i in np.nonzero(on_organ)[0]:
        c = mesh.curvature[i]
        assert abs(c.gaussian - 1.0 / r**2) <= 1e-6 / r**2
        assert abs(c.mean - 1.0 / r) <= 1e-6 / r
        assert c.nonconcave


def test_ellipsoid_pole_curvature_identity_map():
    a, b, c_ax = 50.0, 30.0, 20.0
    sc = ws.assemble_scene(ORIGIN, ws.Sphere(ORIGIN, 200.0),
                           [ws.Ellipsoid([0.0, 0.0, -120.0], [a, b, c_ax])],
                           n_samples=64, seed=0)
    mesh = jm.build_boundary(sc, jm.IdentityKinematics(), grid=(12, 12))
    pole = np.nonzero(np.abs(mesh.theta - math.pi) < 1e-12)[0]
    assert pole.shape[0] == 1
    i = int(pole[0])
    np.testing.assert_allclose(mesh.position[i], [0.0, 0.0, -100.0], atol=1e-7)
    k_true = c_ax**2 / (a**2 * b**2)
    h_true = c_ax * (a**2 + b**2) / (2.0 * a**2 * b**2)
    assert abs(mesh.curvature[i].gaussian - k_true) <= 1e-6 * k_true
    assert abs(mesh.curvature[i].mean - h_true) <= 1e-6 * h_true


def test_curvature_invariant_under_field_rescaling():
    rng = np.random.default_rng(3)
    for _ in range(50):
        g = rng.normal(size=3)
        h = rng.normal(size=(3, 3))
        h = 0.5 * (h + h.T)
        base = jm.curvature_from_frame(g, h)
        lam = float(rng.uniform(0.1, 50.0))
        scaled = jm.curvature_from_frame(lam * g, lam * h)
        np.testing.assert_allclose(scaled.gaussian, base.gaussian, rtol=1e-9)
        np.testing.assert_allclose(scaled.mean, base.mean, rtol=1e-9)
        assert scaled.nonconcave == base.nonconcave


def test_pullback_frame_matches_finite_differences():
    sc = ws.make_hemisphere_scene()
    kin = jm.RcmKinematics(sc.port, am.ArmGeometry())
    mesh = jm.build_boundary(sc, kin, grid=(12, 12))
    step = 1e-4
    for i in (0, mesh.vertex_count // 2, mesh.vertex_count - 1):
        qr0 = mesh.reduced[i]
        surf = sc.surface_at(mesh.position[i])

        def field(qr):
            return float(surf.value(kin.map_to_position(qr)))

        g_fd = np.empty(3)
        h_fd = np.empty((3, 3))
        for r in range(3):
            qp, qm = qr0.copy(), qr0.copy()
            qp[r] += step
            qm[r] -= step
            g_fd[r] = (field(qp) - field(qm)) / (2 * step)
            for s in range(3):
                qpp, qpm, qmp, qmm = (qr0.copy() for _ in range(4))
                qpp[r] += step
                qpp[s] += step
                qmm[r] -= step
                qmm[s] -= step
                qpm[r] += step
                qpm[s] -= step
                qmp[r] -= step
                qmp[s] += step
                h_fd[r, s] = (field(qpp) - field(qpm) - field(qmp) + field(qmm)) / (4 * step**2)
        g, h = jm.pullback_frame(qr0, mesh.position[i], sc, kin)
        np.testing.assert_allclose(g, g_fd, rtol=1e-5, atol=1e-8 * np.linalg.norm(g))
        np.testing.assert_allclose(h, h_fd, rtol=1e-4, atol=1e-6 * np.linalg.norm(h))


def test_curvature_at_matches_stored_samples():
    sc = ball_scene()
    kin = jm.IdentityKinematics()
    mesh = jm.build_boundary(sc, kin, grid=(8, 10))
    for i in (0, 5, mesh.vertex_count - 1):
        c = jm.curvature_at(mesh, i, sc, kin)
        assert c == mesh.curvature[i]


def test_degenerate_frames_raise():
    with pytest.raises(ZeroGradient):
        jm.curvature_from_frame(np.zeros(3), np.eye(3))

    class FlatKinematics(jm.IdentityKinematics):
        def jacobian(self, qr):
            j = np.eye(3)
            j[2, 2] = 0.0
            return j

    sc = ball_scene()
    with pytest.raises(SingularJacobian):
        jm.pullback_frame(np.array([0.0, 0.0, 200.0]),
                          np.array([0.0, 0.0, 200.0]), sc, FlatKinematics())


# -- grid construction ---------------------------------------------------------

def test_grid_vertex_count_full_coverage():
    # one hit per direction, pole row collapses to a single vertex
    sc = ball_scene()
    mesh = jm.build_boundary(sc, jm.IdentityKinematics(), grid=(10, 12))
    assert mesh.vertex_count == 10 * 12 - (12 - 1)
    assert mesh.skipped == ()
    np.testing.assert_allclose(np.linalg.norm(mesh.position, axis=1), 200.0,
                               atol=1e-6)


def test_grid_below_minimum_rejected():
    sc = ball_scene()
    with pytest.raises(DegenerateInput):
        jm.build_boundary(sc, jm.IdentityKinematics(), grid=(3, 12))
    with pytest.raises(DegenerateInput):
        jm.build_boundary(sc, jm.IdentityKinematics(), grid=(4, 7))


def test_vertex_fidelity_and_lift_consistency():
    sc = ws.make_hemisphere_scene()
    kin = jm.RcmKinematics(sc.port, am.ArmGeometry())
    mesh = jm.build_boundary(sc, kin, grid=(16, 16))
    for i in range(mesh.vertex_count):
        back = kin.map_to_position(mesh.reduced[i])
        assert np.linalg.norm(back - mesh.position[i]) <= 1e-6
        np.testing.assert_allclose(mesh.lifted[i, :3], mesh.reduced[i], atol=1e-12)
        np.testing.assert_allclose(mesh.lifted[i], kin.lift(mesh.reduced[i]),
                                   atol=1e-12)
        cfg = mesh.vertex_config(i)
        np.testing.assert_allclose(cfg.as_array(), mesh.lifted[i], atol=1e-12)


def test_skip_records_and_strict_no_hit():
    # the cap-plane row theta = pi/2 runs parallel to the rim and never hits
    sc = ws.make_hemisphere_scene()
    kin = jm.RcmKinematics(sc.port, am.ArmGeometry())
    mesh = jm.build_boundary(sc, kin, grid=(16, 16))
    reasons = {r for _, _, r in mesh.skipped}
    assert any("no boundary hit" in r for r in reasons)
    assert any(r.startswith("inverse kinematics") for r in reasons)
    with pytest.raises(NoHit):
        jm.build_boundary(sc, kin, grid=(16, 16), strict=True)


def test_strict_ik_failure_reports_direction():
    sc = ball_scene()
    with pytest.raises(IKFailure) as info:
        jm.build_boundary(sc, FussyKinematics(z_min=-50.0), grid=(8, 10),
                          strict=True)
    assert info.value.theta is not None and info.value.phi is not None
    # the offending direction points into the refused band
    u_z = math.cos(info.value.theta)
    assert 200.0 * u_z < -50.0


def test_strict_fidelity_failure():
    sc = ball_scene()
    with pytest.raises(IKFailure) as info:
        jm.build_boundary(sc, DriftingKinematics(), grid=(8, 10), strict=True)
    assert "fidelity" in str(info.value)


def test_all_skipped_raises_empty_mesh():
    sc = ball_scene()
    with pytest.raises(EmptyMesh):
        jm.build_boundary(sc, FussyKinematics(z_min=1e9), grid=(8, 10))


def test_build_is_deterministic():
    sc = ws.make_hemisphere_scene()
    kin = jm.RcmKinematics(sc.port, am.ArmGeometry())
    m1 = jm.build_boundary(sc, kin, grid=(14, 14))
    m2 = jm.build_boundary(sc, kin, grid=(14, 14))
    assert np.array_equal(m1.reduced, m2.reduced)
    assert np.array_equal(m1.triangles, m2.triangles)
    assert np.array_equal(m1.patch_id, m2.patch_id)
    assert m1.patch_seeds == m2.patch_seeds


def test_surface_adjacency_subset_of_walk_adjacency():
    sc = organ_scene([0.0, 0.0, -100.0], 40.0)
    mesh = jm.build_boundary(sc, jm.IdentityKinematics(), grid=(12, 12))
    assert len(mesh.adjacency) == len(mesh.walk_adjacency) == mesh.vertex_count
    for near, walk in zip(mesh.adjacency, mesh.walk_adjacency):
        assert set(near) <= set(walk)


# -- triangulation oracle ------------------------------------------------------

def circumsphere(p):
    """Center and squared radius of the sphere through four points."""
    a = 2.0 * (p[1:] - p[0])
    b = (p[1:] ** 2).sum(axis=1) - (p[0] ** 2).sum()
    center = np.linalg.solve(a, b)
    return center, ((p[0] - center) ** 2).sum()


def test_delaunay_tetrahedra_have_empty_circumspheres():
    from scipy.spatial import Delaunay

    rng = np.random.default_rng(11)
    pts = rng.uniform(-1.0, 1.0, size=(15, 3))
    tets = Delaunay(pts).simplices
    for tet in tets:
        center, r2 = circumsphere(pts[tet])
        d2 = ((pts - center) ** 2).sum(axis=1)
        others = np.setdiff1d(np.arange(len(pts)), tet)
        assert np.all(d2[others] >= r2 * (1.0 - 1e-9))


# -- patch segmentation --------------------------------------------------------

def test_concave_wall_vertices_become_residual_singletons():
    sc = organ_scene([0.0, 0.0, -100.0], 40.0)
    mesh = jm.build_boundary(sc, jm.IdentityKinematics(), grid=(12, 12))
    organ = sc.organs[0]
    on_organ = np.abs(organ.value(mesh.position)) < 1e-6
    sizes = {label: int((mesh.patch_id == label).sum())
             for label in mesh.patch_seeds}
    for i in range(mesh.vertex_count):
        if not on_organ[i]:
            assert sizes[int(mesh.patch_id[i])] == 1
    organ_labels = {int(mesh.patch_id[i]) for i in np.nonzero(on_organ)[0]}
    assert len(organ_labels) == 1
    assert sizes[organ_labels.pop()] == int(on_organ.sum())


def test_patch_seed_is_member_nearest_centroid():
    sc = organ_scene([0.0, 0.0, -100.0], 40.0)
    mesh = jm.build_boundary(sc, jm.IdentityKinematics(), grid=(12, 12))
    for label, seed in mesh.patch_seeds.items():
        members = np.nonzero(mesh.patch_id == label)[0]
        if members.shape[0] <= 1:
            continue
        centroid = mesh.reduced[members].mean(axis=0)
        d = np.linalg.norm(mesh.reduced[members] - centroid, axis=1)
        assert seed in members
        d_seed = float(np.linalg.norm(mesh.reduced[seed] - centroid))
        assert d_seed <= d.min() + 1e-12


def two_panel_fixture(valley):
    """Two flat triangles meeting at a hinge; valley=True makes it concave."""
    s = -1.0 if valley else 1.0
    pts = np.array([
        [-2.0, 0.0, 0.0], [-2.0, 1.0, 0.0], [-1.0, 0.0, s],   # panel A
        [2.0, 0.0, 0.0], [2.0, 1.0, 0.0], [1.0, 0.0, s],      # panel B
    ])
    n_a = np.array([-s, 0.0, 1.0]) / math.sqrt(2.0)
    n_b = np.array([s, 0.0, 1.0]) / math.sqrt(2.0)
    normals = np.array([n_a, n_a, n_a, n_b, n_b, n_b])
    adjacency = ((1, 2), (0, 2), (0, 1, 5), (4, 5), (3, 5), (2, 3, 4))
    return pts, adjacency, normals


def test_hinge_predicate_joins_ridge_and_splits_valley():
    pts, adj, normals = two_panel_fixture(valley=False)
    labels, seeds = jm.segment_convex_patches(pts, adj, normals, [True] * 6)
    assert len(set(labels.tolist())) == 1      # convex ridge is one patch

    pts, adj, normals = two_panel_fixture(valley=True)
    labels, seeds = jm.segment_convex_patches(pts, adj, normals, [True] * 6)
    assert labels[0] == labels[1] == labels[2]
    assert labels[3] == labels[4] == labels[5]
    assert labels[0] != labels[3]              # concave hinge separates panels


def test_concave_vertex_stays_singleton_despite_edges():
    pts, adj, normals = two_panel_fixture(valley=False)
    flags = [True, True, False, True, True, True]
    labels, seeds = jm.segment_convex_patches(pts, adj, normals, flags)
    assert int((labels == labels[2]).sum()) == 1
    assert labels[0] == labels[1]
    assert labels[3] == labels[4] == labels[5]


# -- nearest forbidden configuration -------------------------------------------

def test_greedy_matches_bruteforce_identity_two_organs():
    a = ws.Sphere([0.0, 0.0, -120.0], 35.0)
    b = ws.Sphere([90.0, 0.0, -90.0], 30.0)
    sc = ws.assemble_scene(ORIGIN, ws.Sphere(ORIGIN, 220.0), [a, b],
                           n_samples=64, seed=0)
    mesh = jm.build_boundary(sc, jm.IdentityKinematics(), grid=(16, 16))
    multi = [m for m in mesh._patch_vertices.values() if m.shape[0] > 1]
    assert len(multi) >= 2
    rng = np.random.default_rng(5)
    for _ in range(200):
        qr = rng.uniform(-220.0, 220.0, size=3)
        _, d_brute = jm.nearest_forbidden_bruteforce(qr, mesh)
        _, d_greedy = jm.nearest_forbidden_greedy(qr, mesh)
        assert d_greedy >= d_brute - 1e-12
        assert abs(d_greedy - d_brute) <= 1e-9


def test_greedy_matches_bruteforce_arm_mesh():
    sc = ws.make_hemisphere_scene()
    kin = jm.RcmKinematics(sc.port, am.ArmGeometry())
    mesh = jm.build_boundary(sc, kin, grid=(20, 20))
    limits = am.ArmGeometry().joint_limits
    rng = np.random.default_rng(9)
    agree = 0
    for _ in range(300):
        qr = limits[:3, 0] + (limits[:3, 1] - limits[:3, 0]) * rng.random(3)
        nearest, d_brute = jm.nearest_forbidden_bruteforce(qr, mesh)
        _, d_greedy = jm.nearest_forbidden_greedy(qr, mesh)
        assert d_greedy >= d_brute - 1e-12
        agree += abs(d_greedy - d_brute) <= 1e-9
        assert any(np.allclose(nearest, v) for v in mesh.reduced)
    assert agree >= 297


def test_nearest_queries_reject_empty_mesh():
    empty = jm.BoundaryMesh(
        reduced=np.zeros((0, 3)), lifted=np.zeros((0, 5)),
        theta=np.zeros(0), phi=np.zeros(0), radius=np.zeros(0),
        position=np.zeros((0, 3)), normals=np.zeros((0, 3)),
        triangles=np.zeros((0, 3), dtype=int), adjacency=(),
        walk_adjacency=(), curvature=(), patch_id=np.zeros(0, dtype=int),
        patch_seeds={}, skipped=(), _patch_vertices={},
        _residual=np.zeros(0, dtype=int))
    with pytest.raises(EmptyMesh):
        jm.nearest_forbidden_bruteforce(np.zeros(3), empty)
    with pytest.raises(EmptyMesh):
        jm.nearest_forbidden_greedy(np.zeros(3), empty)


# -- export --------------------------------------------------------------------

def test_mesh_exports(tmp_path):
    sc = organ_scene([0.0, 0.0, -100.0], 40.0)
    mesh = jm.build_boundary(sc, jm.IdentityKinematics(), grid=(10, 12))

    obj_path = tmp_path / "mesh.obj"
    jm.export_mesh_obj(mesh, obj_path)
    lines = obj_path.read_text().splitlines()
    v_lines = [l for l in lines if l.startswith("v ")]
    f_lines = [l for l in lines if l.startswith("f ")]
    assert len(v_lines) == mesh.vertex_count
    assert len(f_lines) == mesh.triangles.shape[0]
    first = np.array([float(t) for t in v_lines[0].split()[1:]])
    np.testing.assert_allclose(first, np.degrees(mesh.reduced[0]), atol=1e-6)
    indices = {int(tok) for l in f_lines for tok in l.split()[1:]}
    assert min(indices) >= 1 and max(indices) <= mesh.vertex_count

    side_path = tmp_path / "mesh.json"
    jm.export_mesh_sidecar(mesh, side_path)
    payload = json.loads(side_path.read_text())
    assert payload["vertex_count"] == mesh.vertex_count
    assert len(payload["patch_id"]) == mesh.vertex_count
    assert len(payload["curvature"]) == mesh.vertex_count
    assert all({"theta", "phi", "reason"} <= set(s) for s in payload["skipped"])
