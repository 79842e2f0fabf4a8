"""Position-space surgical scene.

Anatomy is modeled with analytic implicit surfaces: a cavity the instrument
tip may move in and organ obstacles it must stay out of.  The free region is

    free(x)  <=>  F_cavity(x) < 0  and  F_organ_i(x) > 0 for every organ,

every primitive being negative on its inside.  The module provides the
composite field, ray casting from the trocar port, an area-weighted sample
set of the forbidden-region boundary, nearest-boundary queries, and the
position-space edge cost used by the baseline planner.

Distances are millimetres, angles radians.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, NoHit
from .fileio import atomic_write_text

# Tolerance for membership tests that must admit points exactly on the
# boundary (the port is allowed to sit on the cavity wall).
_BOUNDARY_TOL = 1e-6

# Ray casting: 1 mm bracketing march, then bisection; 26 halvings shrink the
# bracket below 2e-8 mm, comfortably under the 1e-6 mm contract.
_RAY_STEP = 1.0
_BISECT_ITERS = 26

_SAMPLE_CHUNK = 4096


@dataclass(frozen=True)
class SphericalDirection:
    """Downward-hemisphere ray direction from the port.

    theta in [pi/2, pi] (pi/2 horizontal, pi straight down), phi in [0, 2pi).
    """

    theta: float
    phi: float

    def __post_init__(self):
        if not (math.pi / 2 - 1e-12 <= self.theta <= math.pi + 1e-12):
            raise DegenerateInput(f"theta {self.theta} outside [pi/2, pi]")
        if not (-1e-12 <= self.phi < 2 * math.pi + 1e-12):
            raise DegenerateInput(f"phi {self.phi} outside [0, 2*pi)")

    def unit(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi),
                         st * math.sin(self.phi),
                         math.cos(self.theta)])


class Sphere:
    """F(x) = ||x - c||^2 - r^2, negative inside."""

    tag = "sphere"

    def __init__(self, center, radius: float):
        if radius <= 0.0:
            raise DegenerateInput("sphere radius must be positive")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        d = x - self.center
        return np.sum(d * d, axis=-1) - self.radius ** 2

    def grad(self, x):
        return 2.0 * (np.asarray(x, dtype=float) - self.center)

    def hess(self, x):
        return 2.0 * np.eye(3)


class Ellipsoid:
    """F(x) = sum(((x_i - c_i) / r_i)^2) - 1, negative inside."""

    tag = "ellipsoid"

    def __init__(self, center, radii):
        self.center = np.asarray(center, dtype=float)
        self.radii = np.asarray(radii, dtype=float)
        if self.radii.shape != (3,) or np.any(self.radii <= 0.0):
            raise DegenerateInput("ellipsoid needs three positive semi-axes")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        u = (x - self.center) / self.radii
        return np.sum(u * u, axis=-1) - 1.0

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * (x - self.center) / self.radii ** 2

    def hess(self, x):
        return np.diag(2.0 / self.radii ** 2)


class Plane:
    """F(x) = (x - anchor) . n, negative on the side n points away from."""

    tag = "plane"

    def __init__(self, anchor, normal):
        self.anchor = np.asarray(anchor, dtype=float)
        n = np.asarray(normal, dtype=float)
        norm = float(np.linalg.norm(n))
        if norm < 1e-12:
            raise DegenerateInput("plane normal must be nonzero")
        self.normal = n / norm

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum((x - self.anchor) * self.normal, axis=-1)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.normal, x.shape).copy()

    def hess(self, x):
        return np.zeros((3, 3))


class Intersection:
    """Region inside every part: F = max of the part fields."""

    def __init__(self, parts, tag: str = "union"):
        if not parts:
            raise DegenerateInput("intersection needs at least one part")
        self.parts = tuple(parts)
        self.tag = tag

    def value(self, x):
        return np.maximum.reduce([p.value(x) for p in self.parts])

    def active(self, x):
        """Part whose surface passes through x (largest field value)."""
        vals = [float(p.value(x)) for p in self.parts]
        return self.parts[int(np.argmax(vals))]

    def grad(self, x):
        return self.active(x).grad(x)

    def hess(self, x):
        return self.active(x).hess(x)


@dataclass(frozen=True)
class OrientedSurface:
    """A primitive with its field sign flipped so the gradient points into
    the free region (field negative on the forbidden side)."""

    surface: object
    sign: float

    @property
    def tag(self):
        return self.surface.tag

    def value(self, x):
        return self.sign * self.surface.value(x)

    def grad(self, x):
        return self.sign * self.surface.grad(x)

    def hess(self, x):
        return self.sign * self.surface.hess(x)


@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable environment: port, cavity, organs, boundary samples."""

    port: np.ndarray
    cavity: object
    organs: tuple
    boundary_samples: np.ndarray = field(repr=False)
    ray_limit: float = 2000.0

    def value(self, x):
        """Composite forbidden-region field: negative iff x is free."""
        fields = [self.cavity.value(x)]
        for organ in self.organs:
            fields.append(-organ.value(x))
        return np.maximum.reduce(fields)

    def is_free(self, x, tol: float = _BOUNDARY_TOL):
        return self.value(x) <= tol

    def surface_at(self, x) -> OrientedSurface:
        """The primitive surface passing through boundary point x, oriented
        with its gradient pointing into the free region."""
        x = np.asarray(x, dtype=float)
        vals = [float(self.cavity.value(x))]
        vals += [float(-organ.value(x)) for organ in self.organs]
        idx = int(np.argmax(vals))
        if idx == 0:
            part = self.cavity
            if isinstance(part, Intersection):
                part = part.active(x)
            return OrientedSurface(part, -1.0)
        return OrientedSurface(self.organs[idx - 1], +1.0)


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------

def _ray_cast_batch(scene: Scene, dirs: np.ndarray) -> np.ndarray:
    """First boundary hit distance per unit direction; NaN where no hit.

    Marches from the port, starts the bracket at the first strictly free
    sample (the port itself may sit on the boundary), then bisects the first
    crossing back to the forbidden side.
    """
    dirs = np.asarray(dirs, dtype=float)
    n_steps = int(math.ceil(scene.ray_limit / _RAY_STEP))
    # Start at the first step: the port itself may sit on the boundary with
    # rounding-level field values, which must not open a bracket at t=0.
    t = (1.0 + np.arange(n_steps)) * _RAY_STEP
    out = np.full(dirs.shape[0], np.nan)

    for start in range(0, dirs.shape[0], 512):
        block = dirs[start:start + 512]
        pts = scene.port + t[None, :, None] * block[:, None, :]
        vals = scene.value(pts)
        free = vals < 0.0
        has_free = free.any(axis=1)
        first_free = np.argmax(free, axis=1)
        # first forbidden sample strictly after entering the free region
        idx = np.arange(n_steps)[None, :]
        forb_after = (~free) & (idx > first_free[:, None])
        has_cross = forb_after.any(axis=1) & has_free
        j = np.argmax(forb_after, axis=1)

        rows = np.nonzero(has_cross)[0]
        if rows.size == 0:
            continue
        lo = t[j[rows] - 1]
        hi = t[j[rows]]
        sub = block[rows]
        for _ in range(_BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            v = scene.value(scene.port + mid[:, None] * sub)
            hit = v >= 0.0
            hi = np.where(hit, mid, hi)
            lo = np.where(hit, lo, mid)
        out[start + rows] = 0.5 * (lo + hi)
    return out


def ray_cast(scene: Scene, direction: SphericalDirection) -> float:
    """Distance from the port to the first forbidden-boundary crossing."""
    r = _ray_cast_batch(scene, direction.unit()[None, :])[0]
    if math.isnan(r):
        raise NoHit(f"ray (theta={direction.theta:.6f}, phi={direction.phi:.6f}) "
                    f"finds no boundary within {scene.ray_limit:.0f} mm")
    return float(r)


# ---------------------------------------------------------------------------
# Boundary sampling
# ---------------------------------------------------------------------------

def _visible_on_boundary(point_block, owner, cavity, organs):
    """Mask of points that genuinely lie on the forbidden-region boundary."""
    ok = np.ones(point_block.shape[0], dtype=bool)
    if owner is not cavity:
        ok &= cavity.value(point_block) <= _BOUNDARY_TOL
    for organ in organs:
        if organ is owner:
            continue
        ok &= organ.value(point_block) >= -_BOUNDARY_TOL
    return ok


def _faces_of(cavity, organs):
    """(owner, kind, geometry) sampling faces with area upper bounds.

    kind 'sphere'/'ellipsoid' draw on the primitive's full surface and clip;
    'zone' is the spherical part of an intersection clipped by its plane;
    'disk' is the flat cap where a plane cuts the sphere.
    """
    faces = []

    def quadric_face(owner, prim, extra_parts=()):
        if isinstance(prim, Sphere):
            bound = 4.0 * math.pi * prim.radius ** 2
            faces.append((owner, "sphere", prim, extra_parts, bound))
        elif isinstance(prim, Ellipsoid):
            r = prim.radii
            m_max = float(max(r[1] * r[2], r[0] * r[2], r[0] * r[1]))
            faces.append((owner, "ellipsoid", prim, extra_parts, 4.0 * math.pi * m_max))
        else:
            raise DegenerateInput(f"cannot sample surface of {type(prim).__name__}")

    if isinstance(cavity, Intersection):
        spheres = [p for p in cavity.parts if isinstance(p, Sphere)]
        planes = [p for p in cavity.parts if isinstance(p, Plane)]
        if len(spheres) != 1 or len(planes) != 1 or len(cavity.parts) != 2:
            raise DegenerateInput("composite cavity must be one sphere cut by one plane")
        sph, pln = spheres[0], planes[0]
        faces.append((cavity, "zone", sph, (pln,), 4.0 * math.pi * sph.radius ** 2))
        h = float((sph.center - pln.anchor) @ pln.normal)
        rho_sq = sph.radius ** 2 - h * h
        if rho_sq > 0.0:
            disk_center = sph.center - h * pln.normal
            faces.append((cavity, "disk", (pln, disk_center, math.sqrt(rho_sq)), (),
                          math.pi * rho_sq))
    else:
        quadric_face(cavity, cavity)
    for organ in organs:
        quadric_face(organ, organ)
    return faces


def _draw_on_face(kind, geom, extra_parts, count, rng):
    """Raw candidate points plus their per-point acceptance probability."""
    if kind == "disk":
        pln, center, rho = geom
        # orthonormal basis in the plane
        n = pln.normal
        a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(n, a)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        rad = rho * np.sqrt(rng.random(count))
        ang = rng.random(count) * 2.0 * math.pi
        pts = (center + rad[:, None] * (np.cos(ang)[:, None] * e1
                                        + np.sin(ang)[:, None] * e2))
        return pts, np.ones(count)

    u = rng.normal(size=(count, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    if kind == "sphere" or kind == "zone":
        pts = geom.center + geom.radius * u
        accept = np.ones(count)
        for pln in extra_parts:
            accept *= (pln.value(pts) <= _BOUNDARY_TOL)
        return pts, accept
    if kind == "ellipsoid":
        r = geom.radii
        m = np.linalg.norm(u * np.array([r[1] * r[2], r[0] * r[2], r[0] * r[1]]),
                           axis=1)
        m_max = float(max(r[1] * r[2], r[0] * r[2], r[0] * r[1]))
        return geom.center + r * u, m / m_max
    raise DegenerateInput(f"unknown face kind {kind}")


def sample_boundary(cavity, organs, n_samples: int, rng) -> np.ndarray:
    """Area-weighted samples of the forbidden-region boundary.

    Mixture rejection: a face is chosen proportionally to an upper bound of
    its area, a candidate is drawn uniformly under that bound, and it is kept
    with the area-distortion probability and only when visible (not occluded
    by another primitive's interior).  The accepted set is exactly
    area-distributed on the visible boundary.
    """
    faces = _faces_of(cavity, organs)
    bounds = np.array([f[4] for f in faces])
    probs = bounds / bounds.sum()

    collected = []
    total = 0
    guard = 0
    while total < n_samples:
        guard += 1
        if guard > 10_000:
            raise DegenerateInput("boundary sampling stalled: boundary almost fully occluded")
        picks = rng.choice(len(faces), size=_SAMPLE_CHUNK, p=probs)
        chunk_pts = np.empty((_SAMPLE_CHUNK, 3))
        chunk_keep = np.zeros(_SAMPLE_CHUNK, dtype=bool)
        for fi in np.unique(picks):
            owner, kind, geom, extra, _ = faces[fi]
            rows = picks == fi
            count = int(np.sum(rows))
            pts, accept = _draw_on_face(kind, geom, extra, count, rng)
            keep = rng.random(count) < accept
            keep &= _visible_on_boundary(pts, owner, cavity, organs)
            chunk_pts[rows] = pts
            chunk_keep[rows] = keep
        # keep draw order so the final truncation stays area-unbiased
        kept = chunk_pts[chunk_keep]
        if kept.shape[0]:
            collected.append(kept)
            total += kept.shape[0]
    return np.concatenate(collected)[:n_samples]


# ---------------------------------------------------------------------------
# Scene assembly
# ---------------------------------------------------------------------------

def assemble_scene(port, cavity, organs, *, n_samples: int = 5000, seed: int = 0,
                   ray_limit: float = 2000.0) -> Scene:
    if n_samples < 4:
        raise DegenerateInput("boundary sample count must be at least 4")
    port = np.asarray(port, dtype=float)
    organs = tuple(organs)
    rng = np.random.default_rng(seed)
    samples = sample_boundary(cavity, organs, n_samples, rng)
    scene = Scene(port=port, cavity=cavity, organs=organs,
                  boundary_samples=samples, ray_limit=float(ray_limit))
    if not scene.is_free(port):
        raise DegenerateInput("port does not lie in the free region")
    return scene


def make_hemisphere_scene(L: float = 500.0, k: float = 0.5, p=(750.0, 0.0, -300.0),
                          *, cap_offset: float = 0.0, n_samples: int = 5000,
                          seed: int = 0) -> Scene:
    """Bench scene: hemispherical cavity of radius k*L about the port with a
    mimic-bladder sphere hanging 0.3*L below the port."""
    if L <= 0.0:
        raise DegenerateInput("instrument length must be positive")
    if not 0.0 < k <= 1.0:
        raise DegenerateInput(f"cavity ratio k={k} outside (0, 1]")
    p = np.asarray(p, dtype=float)
    radius = k * L
    cavity = Intersection(
        [Sphere(p, radius),
         Plane(p + np.array([0.0, 0.0, cap_offset]), [0.0, 0.0, 1.0])],
        tag="hemispherical-cavity")
    bladder = Sphere(p + np.array([0.0, 0.0, -0.3 * L]), 0.15 * L)
    return assemble_scene(p, cavity, [bladder], n_samples=n_samples, seed=seed,
                          ray_limit=4.0 * L)


def make_cholecystectomy_scene(*, port=(750.0, 0.0, -300.0), n_samples: int = 5000,
                               seed: int = 0) -> Scene:
    """Gallbladder-removal mimic: oblate cavity under the port, liver and
    gallbladder ellipsoids inside it.  The port sits exactly on the cavity
    wall."""
    port = np.asarray(port, dtype=float)
    drop = 50.0 * math.sqrt(3.0)
    cavity = Ellipsoid(port + np.array([-100.0, 0.0, -drop]), [200.0, 200.0, 100.0])
    liver = Ellipsoid([500.0, 0.0, -320.0 - drop], [50.0, 60.0, 60.0])
    gallbladder = Ellipsoid([520.0, 0.0, -370.0 - drop], [50.0, 20.0, 20.0])
    return assemble_scene(port, cavity, [liver, gallbladder],
                          n_samples=n_samples, seed=seed, ray_limit=2000.0)


# ---------------------------------------------------------------------------
# Boundary queries and baseline cost
# ---------------------------------------------------------------------------

def nearest_boundary_batch(scene: Scene, xs) -> tuple:
    """(points, distances) of the nearest boundary sample per query row."""
    samples = scene.boundary_samples
    if samples.shape[0] == 0:
        raise DegenerateInput("scene has no boundary samples")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    idx = np.empty(xs.shape[0], dtype=int)
    dist = np.empty(xs.shape[0])
    for start in range(0, xs.shape[0], 1024):
        block = xs[start:start + 1024]
        d2 = np.sum((block[:, None, :] - samples[None, :, :]) ** 2, axis=2)
        best = np.argmin(d2, axis=1)
        idx[start:start + 1024] = best
        dist[start:start + 1024] = np.sqrt(d2[np.arange(block.shape[0]), best])
    return samples[idx], dist


def nearest_boundary_point(scene: Scene, x) -> np.ndarray:
    """Exhaustive nearest boundary sample to x."""
    pts, _ = nearest_boundary_batch(scene, np.asarray(x, dtype=float)[None, :])
    return pts[0]


def baseline_edge_cost(xa, xb, scene: Scene, sigma_x: float) -> float:
    """Position-space edge cost: length times (1 + sigma_x / midpoint clearance)."""
    if sigma_x < 0.0:
        raise DegenerateInput("sigma_x must be nonnegative")
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    length = float(np.linalg.norm(xb - xa))
    if length == 0.0:
        return 0.0
    if sigma_x == 0.0:
        return length
    mid = 0.5 * (xa + xb)
    _, dist = nearest_boundary_batch(scene, mid[None, :])
    d = float(dist[0])
    if d == 0.0:
        return math.inf
    return length * (1.0 + sigma_x / d)


def export_boundary_obj(scene: Scene, path) -> None:
    """Boundary sample cloud as OBJ vertices."""
    lines = ["# forbidden-region boundary samples (mm)"]
    for x, y, z in scene.boundary_samples:
        lines.append(f"v {x:.6f} {y:.6f} {z:.6f}")
    atomic_write_text(path, "\n".join(lines) + "\n")
