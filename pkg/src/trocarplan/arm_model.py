"""Kinematics of a 5-DOF holder arm whose tool passes through a fixed port.

The arm carries a straight forceps of length ``forceps_length``.  Joints:

* ``q1`` -- base yaw about the world z axis,
* ``q2`` -- shoulder pitch, 0 horizontal, positive raises the upper arm,
* ``q3`` -- elbow yaw in the arm-local frame,
* ``q4``, ``q5`` -- wrist yaw/pitch, axes intersecting at the wrist point.

The wrist bracket is mounted rotated half a turn about the local z axis, so
at ``q4 = q5 = 0`` the forceps points back along the forearm; positive ``q5``
depresses it below the local horizontal.  With the tool tip inside a body
cavity the shaft must pass through a fixed port point ``p``.  Given the arm
joints ``qr = (q1, q2, q3)`` the two wrist angles are then determined:
``q4 = f(qr)`` and ``q5 = g(qr)``.  This module provides forward/inverse
kinematics, the port-constrained wrist solve, and first/second derivatives
of ``f`` and ``g`` used by the motion metric.

Units: millimetres and radians throughout.  Degrees appear only in the
default-limit table below and in I/O layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DerivativeInconsistency,
    LimitViolation,
    NonConvergence,
    NoSolution,
)

__all__ = [
    "DEFAULT_JOINT_LIMITS_DEG",
    "ArmGeometry",
    "JointConfig",
    "ReducedConfig",
    "forward_kinematics",
    "grad_fg",
    "hess_fg",
    "inverse_kinematics",
    "lift",
    "lifted_jacobian",
    "lifted_second_derivatives",
    "rcm_residual",
    "solve_rcm",
    "tip_jacobian",
]

# Joint range of motion, degrees, one (lo, hi) pair per joint.
DEFAULT_JOINT_LIMITS_DEG = (
    (-150.0, 150.0),
    (0.0, 90.0),
    (-90.0, 0.0),
    (-90.0, 90.0),
    (-14.0, 104.0),
)

_X = np.array([1.0, 0.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])
# Fixed wrist-mount rotation: half turn about local z.
_FLIP = np.diag([-1.0, -1.0, 1.0])

_FD_STEP_GRAD = 1e-6  # rad, central differences for gradient checks
_FD_STEP_HESS = 1e-5  # rad, central differences of the analytic gradient
_GRAD_CHECK_TOL = 1e-4
_HESS_SYMMETRY_TOL = 1e-8
_RCM_RESIDUAL_TOL = 1e-9  # mm, perpendicular distance port-to-shaft
_NEWTON_MAX_ITER = 50
_NEWTON_DAMPING = 0.5


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class ArmGeometry:
    """Link dimensions and joint limits of the holder arm.

    The published description of the arm gives joint ranges but no link
    dimensions, so these defaults are working values chosen to make the
    bench scenes reachable; every operation takes the geometry explicitly
    and results are reported per geometry.
    """

    l2: float = 580.0           # upper-arm length, mm
    l3: float = 520.0           # forearm length, mm
    d_x: float = 60.0           # elbow-to-wrist offset along the forearm, mm
    d_z: float = 300.0          # wrist drop below the forearm, mm
    forceps_length: float = 500.0  # shaft length from wrist to tip, mm
    joint_limits_deg: tuple[tuple[float, float], ...] = DEFAULT_JOINT_LIMITS_DEG

    def __post_init__(self):
        for name in ("l2", "l3", "forceps_length"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.d_x < 0.0 or self.d_z < 0.0:
            raise ValueError("offsets d_x and d_z must be non-negative")
        if len(self.joint_limits_deg) != 5:
            raise ValueError("joint_limits_deg needs 5 (lo, hi) pairs")
        for lo, hi in self.joint_limits_deg:
            if not lo < hi:
                raise ValueError("each joint limit needs lo < hi")

    @property
    def joint_limits(self) -> np.ndarray:
        """Limits in radians, shape (5, 2)."""
        return np.radians(np.asarray(self.joint_limits_deg, dtype=float))

    def check_limits(self, q, joints=None) -> None:
        """Raise LimitViolation if any listed joint is out of range.

        ``joints`` is an iterable of 0-based joint indices; default all
        entries of ``q``.
        """
        q = np.atleast_1d(np.asarray(q, dtype=float))
        lims = self.joint_limits
        idx = range(len(q)) if joints is None else joints
        for k, i in enumerate(idx):
            v = q[k] if joints is not None else q[i]
            lo, hi = lims[i]
            if not (lo - 1e-12 <= v <= hi + 1e-12):
                raise LimitViolation(
                    f"joint {i + 1} value {math.degrees(v):.3f} deg outside "
                    f"[{math.degrees(lo):.1f}, {math.degrees(hi):.1f}] deg"
                )

    def joint_config(self, q1, q2, q3, q4, q5) -> "JointConfig":
        """Validated full configuration (radians)."""
        q = np.array([q1, q2, q3, q4, q5], dtype=float)
        self.check_limits(q)
        return JointConfig(*q)

    def reduced_config(self, q1, q2, q3) -> "ReducedConfig":
        """Validated arm-joint triple (radians)."""
        q = np.array([q1, q2, q3], dtype=float)
        self.check_limits(q, joints=(0, 1, 2))
        return ReducedConfig(*q)

    @classmethod
    def from_dict(cls, d: dict) -> "ArmGeometry":
        """Build from a config mapping with mm/degree fields."""
        kwargs = {}
        for key in ("l2", "l3", "d_x", "d_z"):
            if f"{key}_mm" in d:
                kwargs[key] = float(d[f"{key}_mm"])
        if "forceps_length_mm" in d:
            kwargs["forceps_length"] = float(d["forceps_length_mm"])
        if "joint_limits_deg" in d:
            kwargs["joint_limits_deg"] = tuple(
                (float(lo), float(hi)) for lo, hi in d["joint_limits_deg"]
            )
        return cls(**kwargs)


@dataclass(frozen=True)
class JointConfig:
    """Full joint configuration (radians).

    Use ``ArmGeometry.joint_config`` to construct with limit checking;
    direct construction skips validation and is meant for internal use.
    """

    q1: float
    q2: float
    q3: float
    q4: float
    q5: float

    def as_array(self) -> np.ndarray:
        return np.array([self.q1, self.q2, self.q3, self.q4, self.q5])

    @property
    def reduced(self) -> "ReducedConfig":
        return ReducedConfig(self.q1, self.q2, self.q3)


@dataclass(frozen=True)
class ReducedConfig:
    """Arm joints (q1, q2, q3) in radians; wrist angles are implied by the
    port constraint."""

    q1: float
    q2: float
    q3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.q1, self.q2, self.q3])


def _as_q3(q) -> np.ndarray:
    if isinstance(q, ReducedConfig) or isinstance(q, JointConfig):
        a = q.as_array()[:3]
    else:
        a = np.asarray(q, dtype=float)
    if a.shape != (3,):
        raise ValueError("expected 3 arm joint angles")
    return a


def _as_q5(q) -> np.ndarray:
    if isinstance(q, JointConfig):
        return q.as_array()
    a = np.asarray(q, dtype=float)
    if a.shape != (5,):
        raise ValueError("expected 5 joint angles")
    return a


def _wrist_state(qr: np.ndarray, geom: ArmGeometry):
    """Wrist point, arm rotation and joint axes for the first three joints.

    Returns (w, R123, o3, a1, a2, a3) where w is the wrist position, R123
    the orientation after the elbow, o3 the elbow origin and a* the world
    rotation axes of the three arm joints.
    """
    q1, q2, q3 = qr
    r1 = _rot_z(q1)
    r12 = r1 @ _rot_y(-q2)
    r123 = r12 @ _rot_z(q3)
    o3 = r12 @ np.array([geom.l2, 0.0, 0.0])
    w = o3 + r123 @ np.array([geom.l3 + geom.d_x, 0.0, -geom.d_z])
    a1 = _Z
    a2 = r1 @ np.array([0.0, -1.0, 0.0])  # pitch axis: local -y after base yaw
    a3 = r12 @ _Z
    return w, r123, o3, a1, a2, a3


def _shaft_direction(q: np.ndarray, geom: ArmGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World shaft direction plus wrist state for a full configuration."""
    w, r123, _, _, _, _ = _wrist_state(q[:3], geom)
    r_wb = r123 @ _FLIP
    u = r_wb @ (_rot_z(q[3]) @ (_rot_y(q[4]) @ _X))
    return u, w, r_wb


def forward_kinematics(q, geom: ArmGeometry, *, check_limits: bool = True):
    """Tool-tip position and unit shaft direction for a full configuration.

    Returns ``(tip, shaft_dir)``; the shaft runs from the wrist toward the
    tip, ``tip = wrist + forceps_length * shaft_dir``.
    """
    q = _as_q5(q)
    if check_limits:
        geom.check_limits(q)
    u, w, _ = _shaft_direction(q, geom)
    tip = w + geom.forceps_length * u
    return tip, u


def rcm_residual(q, port, geom: ArmGeometry) -> float:
    """Perpendicular distance (mm) from the port to the shaft line."""
    q = _as_q5(q)
    port = np.asarray(port, dtype=float)
    u, w, _ = _shaft_direction(q, geom)
    d = port - w
    perp = d - (d @ u) * u
    return float(np.linalg.norm(perp))


def _rcm_branches(qr: np.ndarray, port: np.ndarray, geom: ArmGeometry):
    """Both analytic wrist solutions pointing the shaft at the port.

    Branch 0 has ``cos(q5) > 0`` (forward), branch 1 is the reflected pair
    ``(q4 + pi, pi - q5)``.  Raises NoSolution when the wrist coincides
    with the port.
    """
    w, r123, _, _, _, _ = _wrist_state(qr, geom)
    d = port - w
    dist = float(np.linalg.norm(d))
    if dist < 1e-9:
        raise NoSolution("wrist point coincides with the port")
    v = r123.T @ (d / dist)
    vp = _FLIP @ v  # wrist-base frame target direction
    s5 = -vp[2]
    s5 = min(1.0, max(-1.0, s5))
    q5a = math.asin(s5)
    if abs(vp[0]) < 1e-15 and abs(vp[1]) < 1e-15:
        q4a = 0.0  # shaft along the wrist z axis: yaw is undetermined
    else:
        q4a = math.atan2(vp[1], vp[0])
    q4b = _wrap_angle(q4a + math.pi)
    q5b = _wrap_angle(math.pi - q5a)
    return (q4a, q5a), (q4b, q5b), dist


def solve_rcm(qr, port, geom: ArmGeometry, *, check_limits: bool = True,
              branch: int | None = None) -> tuple[float, float]:
    """Wrist angles (q4, q5) putting the port on the forceps shaft line.

    The closed-form gimbal solution seeds a damped Gauss-Newton polish of
    the perpendicular-offset residual; the result satisfies
    ``rcm_residual <= 1e-9`` mm.  With ``check_limits`` the in-range branch
    is selected (LimitViolation if neither branch fits); ``branch`` forces
    branch 0 or 1 and skips selection, which keeps finite-difference probes
    on the branch of the center point.
    """
    qr = _as_q3(qr)
    port = np.asarray(port, dtype=float)
    cands, cands_b, _ = _rcm_branches(qr, port, geom)[:3]
    branches = (cands, cands_b)
    if branch is not None:
        q4, q5 = branches[branch]
    else:
        chosen = None
        for q4c, q5c in branches:
            if not check_limits:
                chosen = (q4c, q5c)
                break
            try:
                geom.check_limits((q4c, q5c), joints=(3, 4))
            except LimitViolation:
                continue
            chosen = (q4c, q5c)
            break
        if chosen is None:
            raise LimitViolation(
                "port direction requires wrist angles outside joint limits"
            )
        q4, q5 = chosen
    q4, q5 = _polish_rcm(qr, q4, q5, port, geom)
    return q4, q5


def _polish_rcm(qr, q4, q5, port, geom) -> tuple[float, float]:
    """Damped Gauss-Newton refinement of the wrist solve.

    The analytic seed is already exact for this wrist (intersecting axes),
    so the loop normally verifies the residual and returns immediately; it
    guards against future geometry variants with offset wrist axes.
    """
    q = np.array([qr[0], qr[1], qr[2], q4, q5])
    for _ in range(_NEWTON_MAX_ITER):
        res = _rcm_perp(q, port, geom)
        if np.linalg.norm(res) <= _RCM_RESIDUAL_TOL:
            return q[3], q[4]
        h = 1e-7
        jac = np.empty((3, 2))
        for j in (3, 4):
            qp, qm = q.copy(), q.copy()
            qp[j] += h
            qm[j] -= h
            jac[:, j - 3] = (_rcm_perp(qp, port, geom)
                             - _rcm_perp(qm, port, geom)) / (2.0 * h)
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        q[3] += _NEWTON_DAMPING * step[0]
        q[4] += _NEWTON_DAMPING * step[1]
    raise NonConvergence("wrist refinement did not reach residual tolerance")


def _rcm_perp(q, port, geom) -> np.ndarray:
    u, w, _ = _shaft_direction(q, geom)
    d = port - w
    return d - (d @ u) * u


def lift(qr, port, geom: ArmGeometry, *, check_limits: bool = True) -> JointConfig:
    """Complete (q1, q2, q3) to the full port-constrained configuration."""
    qr = _as_q3(qr)
    if check_limits:
        geom.check_limits(qr, joints=(0, 1, 2))
    q4, q5 = solve_rcm(qr, port, geom, check_limits=check_limits)
    return JointConfig(qr[0], qr[1], qr[2], q4, q5)


def inverse_kinematics(tip, port, geom: ArmGeometry) -> JointConfig:
    """Joint configuration whose tip reaches ``tip`` through the port.

    Enumerates the analytic elbow/shoulder branches for both wrist points on
    the port-tip line and keeps candidates with all five joints within
    limits.  Candidates whose wrist lies on the far side of the port from
    the tip (instrument actually passed through the port) are preferred;
    ties are broken by the smallest joint-vector norm.  Raises NoSolution
    when the wrist point is out of reach and LimitViolation when solutions
    exist only outside the limits.
    """
    tip = np.asarray(tip, dtype=float)
    port = np.asarray(port, dtype=float)
    dvec = tip - port
    dist = float(np.linalg.norm(dvec))
    if dist < 1e-9:
        raise NoSolution("tool tip coincides with the port")
    u = dvec / dist

    a = geom.l2
    b = geom.l3 + geom.d_x
    c = geom.d_z

    candidates = []
    any_branch = False
    any_reachable = False
    # The wrist sits on the port-tip line one forceps length from the tip,
    # on either side of it.
    for w_target in (tip - geom.forceps_length * u, tip + geom.forceps_length * u):
        inserted = float((w_target - port) @ dvec) < 0.0
        r2 = float(w_target @ w_target)
        cos_q3 = (r2 - a * a - b * b - c * c) / (2.0 * a * b)
        if abs(cos_q3) > 1.0 + 1e-9:
            continue
        any_reachable = True
        cos_q3 = min(1.0, max(-1.0, cos_q3))
        q3_mag = math.acos(cos_q3)
        q3_set = {-q3_mag, q3_mag} if q3_mag > 1e-12 else {0.0}

        for q3 in q3_set:
            vx = a + b * math.cos(q3)
            vy = b * math.sin(q3)
            vz = -c
            rho = math.hypot(vx, vz)
            if rho < 1e-12:
                continue
            # Solve vx sin(q2) + vz cos(q2) = w_z.
            wz = w_target[2]
            if abs(wz) > rho + 1e-9:
                continue
            ratio = min(1.0, max(-1.0, wz / rho))
            base = math.atan2(vz, vx)
            for root in (math.asin(ratio), math.pi - math.asin(ratio)):
                q2 = _wrap_angle(root - base)
                h = vx * math.cos(q2) - vz * math.sin(q2)
                if math.hypot(w_target[0], w_target[1]) < 1e-9:
                    if math.hypot(h, vy) > 1e-6:
                        continue
                    q1 = 0.0  # wrist on the base axis: yaw is free
                else:
                    q1 = _wrap_angle(math.atan2(w_target[1], w_target[0])
                                     - math.atan2(vy, h))
                qr = np.array([q1, q2, q3])
                wq, *_ = _wrist_state(qr, geom)
                if np.linalg.norm(wq - w_target) > 1e-6:
                    continue
                any_branch = True
                try:
                    geom.check_limits(qr, joints=(0, 1, 2))
                    q4, q5 = solve_rcm(qr, port, geom, check_limits=True)
                except LimitViolation:
                    continue
                candidates.append((not inserted, JointConfig(q1, q2, q3, q4, q5)))

    if not candidates:
        if any_branch:
            raise LimitViolation("all inverse-kinematics branches violate joint limits")
        if not any_reachable:
            raise NoSolution("wrist point outside the arm's reachable shell")
        raise NoSolution("no elbow/shoulder branch reaches the wrist target")
    return min(candidates,
               key=lambda c: (c[0], float(np.linalg.norm(c[1].as_array()))))[1]


# ---------------------------------------------------------------------------
# Derivatives of the implicit wrist functions f, g
# ---------------------------------------------------------------------------

def _rcm_angles_and_grads(qr: np.ndarray, port: np.ndarray, geom: ArmGeometry,
                          branch: int):
    """Analytic (q4, q5) plus gradients w.r.t. (q1, q2, q3) on one branch."""
    w, r123, o3, a1, a2, a3 = _wrist_state(qr, geom)
    d = port - w
    dist = float(np.linalg.norm(d))
    if dist < 1e-9:
        raise NoSolution("wrist point coincides with the port")
    t_hat = d / dist

    dw = np.column_stack((np.cross(a1, w), np.cross(a2, w),
                          np.cross(a3, w - o3)))
    # d(t_hat)/dq = -(I - t t^T) dw / dist
    proj = np.eye(3) - np.outer(t_hat, t_hat)
    dt = -(proj @ dw) / dist
    # v' = FLIP R^T t_hat;  dR/dq_i = [a_i]x R
    axes = (a1, a2, a3)
    vp = _FLIP @ (r123.T @ t_hat)
    dvp = np.empty((3, 3))
    for i in range(3):
        dvp[:, i] = _FLIP @ (r123.T @ (dt[:, i] - np.cross(axes[i], t_hat)))

    s5 = min(1.0, max(-1.0, -vp[2]))
    q5a = math.asin(s5)
    denom_xy = vp[0] * vp[0] + vp[1] * vp[1]
    if denom_xy < 1e-24:
        raise SingularityError("wrist yaw undetermined: shaft along wrist z axis")
    q4a = math.atan2(vp[1], vp[0])
    grad_q4 = (vp[0] * dvp[1, :] - vp[1] * dvp[0, :]) / denom_xy
    cos_term = math.sqrt(max(1e-24, 1.0 - vp[2] * vp[2]))
    grad_q5a = -dvp[2, :] / cos_term
    if branch == 0:
        return (q4a, q5a), (grad_q4.copy(), grad_q5a)
    q4b = _wrap_angle(q4a + math.pi)
    q5b = _wrap_angle(math.pi - q5a)
    return (q4b, q5b), (grad_q4.copy(), -grad_q5a)


class SingularityError(NoSolution):
    """Wrist yaw is undetermined (shaft aligned with the wrist z axis)."""


def _active_branch(qr, port, geom) -> int:
    """Branch index the limit-checked solve would pick at this point."""
    (q4a, q5a), (q4b, q5b), _ = _rcm_branches(qr, port, geom)
    lims = geom.joint_limits
    for idx, (q4, q5) in enumerate(((q4a, q5a), (q4b, q5b))):
        if (lims[3][0] - 1e-12 <= q4 <= lims[3][1] + 1e-12
                and lims[4][0] - 1e-12 <= q5 <= lims[4][1] + 1e-12):
            return idx
    return 0  # out of limits everywhere: differentiate the forward branch


def grad_fg(qr, port, geom: ArmGeometry, *, check: bool = True):
    """Gradients of the implicit wrist functions: (grad f, grad g).

    Analytic implicit differentiation of the wrist solve; with ``check``
    the result is compared against central finite differences of the solve
    itself (step 1e-6 rad) and DerivativeInconsistency is raised beyond
    1e-4 relative disagreement.
    """
    qr = _as_q3(qr)
    port = np.asarray(port, dtype=float)
    branch = _active_branch(qr, port, geom)
    _, (gf, gg) = _rcm_angles_and_grads(qr, port, geom, branch)
    if check:
        fd_f, fd_g = _grad_fg_fd(qr, port, geom, branch, _FD_STEP_GRAD)
        for g_an, g_fd, name in ((gf, fd_f, "f"), (gg, fd_g, "g")):
            scale = max(np.linalg.norm(g_an), np.linalg.norm(g_fd), 1e-8)
            err = np.linalg.norm(g_an - g_fd) / scale
            if err > _GRAD_CHECK_TOL:
                raise DerivativeInconsistency(
                    f"grad {name} analytic/finite-difference mismatch: "
                    f"relative error {err:.3e}"
                )
    return gf, gg


def _grad_fg_fd(qr, port, geom, branch, h):
    fd_f = np.empty(3)
    fd_g = np.empty(3)
    for i in range(3):
        qp, qm = qr.copy(), qr.copy()
        qp[i] += h
        qm[i] -= h
        (f_p, g_p), _, _ = _rcm_branches(qp, port, geom)
        (f_m, g_m), _, _ = _rcm_branches(qm, port, geom)
        if branch == 1:
            f_p, g_p = _wrap_angle(f_p + math.pi), _wrap_angle(math.pi - g_p)
            f_m, g_m = _wrap_angle(f_m + math.pi), _wrap_angle(math.pi - g_m)
        fd_f[i] = _wrap_angle(f_p - f_m) / (2.0 * h)
        fd_g[i] = _wrap_angle(g_p - g_m) / (2.0 * h)
    return fd_f, fd_g


def hess_fg(qr, port, geom: ArmGeometry, *, check: bool = False):
    """Hessians of f and g: central differences of the analytic gradients.

    Symmetry of each Hessian is asserted to 1e-8 before symmetrizing.
    """
    qr = _as_q3(qr)
    port = np.asarray(port, dtype=float)
    branch = _active_branch(qr, port, geom)
    h = _FD_STEP_HESS
    hf = np.empty((3, 3))
    hg = np.empty((3, 3))
    for i in range(3):
        qp, qm = qr.copy(), qr.copy()
        qp[i] += h
        qm[i] -= h
        _, (gf_p, gg_p) = _rcm_angles_and_grads(qp, port, geom, branch)
        _, (gf_m, gg_m) = _rcm_angles_and_grads(qm, port, geom, branch)
        hf[i, :] = (gf_p - gf_m) / (2.0 * h)
        hg[i, :] = (gg_p - gg_m) / (2.0 * h)
    for name, m in (("f", hf), ("g", hg)):
        asym = float(np.max(np.abs(m - m.T)))
        scale = max(1.0, float(np.max(np.abs(m))))
        if asym > _HESS_SYMMETRY_TOL * scale:
            raise DerivativeInconsistency(
                f"Hessian of {name} asymmetric beyond tolerance: {asym:.3e}"
            )
    hf = 0.5 * (hf + hf.T)
    hg = 0.5 * (hg + hg.T)
    if check:
        # Cross-check against second differences of the wrist solve itself.
        hh = 1e-4
        for m, which in ((hf, 0), (hg, 1)):
            fd = np.empty((3, 3))
            for i in range(3):
                for j in range(3):
                    acc = 0.0
                    for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                        qq = qr.copy()
                        qq[i] += si * hh
                        qq[j] += sj * hh
                        vals, _, _ = _rcm_branches(qq, port, geom)
                        acc += si * sj * vals[which]
                    fd[i, j] = acc / (4.0 * hh * hh)
            scale = max(np.max(np.abs(m)), np.max(np.abs(fd)), 1e-6)
            if np.max(np.abs(m - fd)) / scale > _GRAD_CHECK_TOL:
                raise DerivativeInconsistency("Hessian cross-check failed")
    return hf, hg


# ---------------------------------------------------------------------------
# Jacobians of the tip map
# ---------------------------------------------------------------------------

def tip_jacobian(q, geom: ArmGeometry) -> np.ndarray:
    """Geometric Jacobian of the tip position w.r.t. all five joints (3x5)."""
    q = _as_q5(q)
    w, r123, o3, a1, a2, a3 = _wrist_state(q[:3], geom)
    r_wb = r123 @ _FLIP
    u = r_wb @ (_rot_z(q[3]) @ (_rot_y(q[4]) @ _X))
    tip = w + geom.forceps_length * u
    a4 = r_wb @ _Z
    a5 = r_wb @ (_rot_z(q[3]) @ np.array([0.0, 1.0, 0.0]))
    jac = np.column_stack((
        np.cross(a1, tip),
        np.cross(a2, tip),
        np.cross(a3, tip - o3),
        np.cross(a4, tip - w),
        np.cross(a5, tip - w),
    ))
    return jac


def lifted_jacobian(qr, port, geom: ArmGeometry, *, check: bool = True) -> np.ndarray:
    """Total derivative d(tip)/d(q1,q2,q3) along the port-constrained lift."""
    qr = _as_q3(qr)
    port = np.asarray(port, dtype=float)
    branch = _active_branch(qr, port, geom)
    (q4, q5), (gf, gg) = _rcm_angles_and_grads(qr, port, geom, branch)
    full = np.array([qr[0], qr[1], qr[2], q4, q5])
    j5 = tip_jacobian(full, geom)
    return j5[:, :3] + np.outer(j5[:, 3], gf) + np.outer(j5[:, 4], gg)


def lifted_second_derivatives(qr, port, geom: ArmGeometry) -> np.ndarray:
    """Second derivatives T[k, i, j] = d2 tip_k / dq_i dq_j of the lifted map.

    Central differences of the analytic lifted Jacobian (step 1e-5 rad),
    symmetrized over (i, j).
    """
    qr = _as_q3(qr)
    port = np.asarray(port, dtype=float)
    h = _FD_STEP_HESS
    t = np.empty((3, 3, 3))
    for i in range(3):
        qp, qm = qr.copy(), qr.copy()
        qp[i] += h
        qm[i] -= h
        jp = lifted_jacobian(qp, port, geom, check=False)
        jm = lifted_jacobian(qm, port, geom, check=False)
        t[:, :, i] = (jp - jm) / (2.0 * h)
    return 0.5 * (t + np.transpose(t, (0, 2, 1)))
