"""Metrics over the reduced joint coordinates.

The wrist angles ride along as implicit functions q4 = f(q1..q3),
q5 = g(q1..q3), so motion measured across all five joints pulls back to a
3x3 quadratic form over the reduced coordinates,

    G_q = I + grad(f) grad(f)^T + grad(g) grad(g)^T.

An obstacle term (sigma_q / distance) * I diverges at the boundary mesh and
keeps minimum-cost paths away from it.  The geodesic residual evaluates the
Euler-Lagrange left-hand side of the combined length functional along a
given curve; it verifies candidate paths rather than producing them.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from . import arm_model
from .errors import AtBoundary, DegenerateInput
from .joint_obstacle_map import BoundaryMesh, nearest_forbidden_greedy

_BOUNDARY_EPS = 1e-12


@dataclass(frozen=True)
class BarrierParams:
    """Buffer scales of the obstacle barriers.

    sigma_q acts in joint space (radians), sigma_x in position space (mm).
    """

    sigma_q: float
    sigma_x: float

    def __post_init__(self):
        if self.sigma_q < 0.0 or self.sigma_x < 0.0:
            raise DegenerateInput("barrier scales must be non-negative")


def _as_q3(qr) -> np.ndarray:
    qr = np.asarray(qr, dtype=float)
    if qr.shape != (3,):
        raise DegenerateInput(f"expected 3 reduced coordinates, got {qr.shape}")
    return qr


def metric_kinematic(qr, port, arm: arm_model.ArmGeometry) -> np.ndarray:
    """Pulled-back joint-motion metric at qr: identity plus two rank-1 terms."""
    qr = _as_q3(qr)
    gf, gg = arm_model.grad_fg(qr, port, arm, check=False)
    return np.eye(3) + np.outer(gf, gf) + np.outer(gg, gg)


def metric_obstacle(qr, q_a, sigma_q: float) -> np.ndarray:
    """Barrier metric (sigma_q / ||qr - q_a||) * I toward the nearest vertex."""
    if sigma_q < 0.0:
        raise DegenerateInput("sigma_q must be non-negative")
    qr = _as_q3(qr)
    q_a = _as_q3(q_a)
    if sigma_q == 0.0:
        return np.zeros((3, 3))
    d = float(np.linalg.norm(qr - q_a))
    if d < _BOUNDARY_EPS:
        raise AtBoundary("configuration coincides with a boundary vertex")
    return (sigma_q / d) * np.eye(3)


def metric_total(qr, mesh: BoundaryMesh, port, arm: arm_model.ArmGeometry,
                 sigma_q: float) -> np.ndarray:
    """Kinematic metric plus the barrier toward the nearest forbidden vertex."""
    base = metric_kinematic(qr, port, arm)
    if sigma_q == 0.0:
        return base
    q_a, _ = nearest_forbidden_greedy(qr, mesh)
    return base + metric_obstacle(qr, q_a, sigma_q)


def edge_cost(q_alpha, q_beta, mesh: BoundaryMesh, port,
              arm: arm_model.ArmGeometry, sigma_q: float) -> float:
    """Metric length of the chord at its midpoint, inflated near the boundary.

    cost = sqrt(dq^T G(mid) dq) * (1 + sigma_q / d(mid)); the boundary itself
    costs +inf.  Kinematics failures at the midpoint propagate to the caller.
    """
    if sigma_q < 0.0:
        raise DegenerateInput("sigma_q must be non-negative")
    q_alpha = _as_q3(q_alpha)
    q_beta = _as_q3(q_beta)
    delta = q_beta - q_alpha
    if not delta.any():
        return 0.0
    mid = 0.5 * (q_alpha + q_beta)
    form = metric_kinematic(mid, port, arm)
    factor = 1.0
    if sigma_q > 0.0:
        q_a, d = nearest_forbidden_greedy(mid, mesh)
        if d < _BOUNDARY_EPS:
            return math.inf
        form = form + metric_obstacle(mid, q_a, sigma_q)
        factor = 1.0 + sigma_q / d
    return math.sqrt(float(delta @ form @ delta)) * factor


def path_length(path, metric) -> float:
    """Trapezoidal metric length of a sampled polyline.

    ``metric`` maps a reduced configuration to its 3x3 form; each segment
    contributes the average of its endpoint speeds.
    """
    pts = np.asarray(path, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
        raise DegenerateInput("path needs at least 2 samples of 3 coordinates")
    total = 0.0
    g_prev = metric(pts[0])
    for a, b in zip(pts[:-1], pts[1:]):
        g_next = metric(b)
        delta = b - a
        v0 = math.sqrt(max(0.0, float(delta @ g_prev @ delta)))
        v1 = math.sqrt(max(0.0, float(delta @ g_next @ delta)))
        total += 0.5 * (v0 + v1)
        g_prev = g_next
    return total


def _default_lift_terms(port, arm: arm_model.ArmGeometry):
    def terms(qr):
        gf, gg = arm_model.grad_fg(qr, port, arm, check=False)
        hf, hg = arm_model.hess_fg(qr, port, arm)
        return gf, gg, hf, hg
    return terms


def geodesic_residual(path, t: float, mesh, port, arm, sigma_q: float, *,
                      h: float = 1e-3, include_kinematic: bool = True,
                      include_obstacle: bool = True,
                      lift_terms=None) -> np.ndarray:
    """Euler-Lagrange left-hand side of the length functional at path(t).

    ``path`` is a callable t -> reduced configuration; derivatives come from
    central differences with step ``h``.  The nearest-vertex map of a discrete
    mesh is piecewise constant, so its derivative term is dropped.  The two
    ``include_*`` switches evaluate the kinematic and obstacle Lagrangians
    separately; the full residual is their sum (the equation is linear in the
    Lagrangian).  ``lift_terms`` overrides the wrist-function derivatives with
    a callable qr -> (grad f, grad g, hess f, hess g) for verification against
    synthetic wrist functions.
    """
    if sigma_q < 0.0:
        raise DegenerateInput("sigma_q must be non-negative")
    q = _as_q3(np.asarray(path(t), dtype=float))
    q_plus = np.asarray(path(t + h), dtype=float)
    q_minus = np.asarray(path(t - h), dtype=float)
    qdot = (q_plus - q_minus) / (2.0 * h)
    qddot = (q_plus - 2.0 * q + q_minus) / (h * h)

    form = np.zeros((3, 3))
    residual = np.zeros(3)
    if include_kinematic:
        terms = lift_terms if lift_terms is not None else _default_lift_terms(port, arm)
        gf, gg, hf, hg = terms(q)
        form = form + np.eye(3) + np.outer(gf, gf) + np.outer(gg, gg)
        residual = residual + gf * float(qdot @ hf @ qdot)
        residual = residual + gg * float(qdot @ hg @ qdot)
    if include_obstacle and sigma_q > 0.0:
        q_a, d = nearest_forbidden_greedy(q, mesh)
        if d < _BOUNDARY_EPS:
            raise AtBoundary("geodesic residual requested on the boundary")
        form = form + (sigma_q / d) * np.eye(3)
        push = np.outer(qdot, qdot) - 0.5 * float(qdot @ qdot) * np.eye(3)
        residual = residual - (sigma_q / d ** 3) * (push @ (q - q_a))
    return form @ qddot + residual
