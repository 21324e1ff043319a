"""Analytic obstacle shapes, boundary functions and local frames.

Every obstacle is a rigid body in the plane. Its boundary function ``h`` is
positive outside, zero on the boundary and negative inside. Shapes are
evaluated in the obstacle's body frame and mapped back to the world frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Union

import numpy as np

from .errors import GradientSingular, NonFiniteInput, ReferenceCoincident

GRADIENT_EPS = 1e-9
_FRAME_EPS = 1e-12


def rot2(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def cross2(omega: float, v: np.ndarray) -> np.ndarray:
    """Planar cross product ``omega x v`` for a scalar angular rate."""
    return omega * np.array([-v[1], v[0]])


@dataclass(frozen=True)
class Circle:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("circle radius must be positive")


@dataclass(frozen=True)
class Funnel:
    """Superellipse ``||q - offset||_4 - size`` in the body frame."""

    offset: tuple = (2.5, 0.0)
    size: float = 0.1

    def __post_init__(self):
        if not self.size > 0:
            raise ValueError("funnel size c_b must be positive")
        object.__setattr__(self, "offset", tuple(float(v) for v in self.offset))


@dataclass(frozen=True)
class OpenRing:
    """Annular band ``r_in <= |q| <= r_out`` with an angular gap.

    The gap is centred on ``gap_heading`` and spans ``2 * gap_half_angle``.
    """

    r_in: float
    r_out: float
    gap_half_angle: float
    gap_heading: float = 0.0

    def __post_init__(self):
        if not 0 < self.r_in < self.r_out:
            raise ValueError("open ring needs 0 < r_in < r_out")
        if not 0 < self.gap_half_angle < math.pi:
            raise ValueError("gap half angle must lie in (0, pi)")


Shape = Union[Circle, Funnel, OpenRing]


class BoundaryEval(NamedTuple):
    h: float
    grad: np.ndarray
    motion_term: float


@dataclass(frozen=True, eq=False)
class Obstacle:
    """A rigid obstacle with pose and constant twist.

    ``rotation_center`` defaults to ``position``. ``reference_point`` is given
    in world coordinates at the obstacle's current pose and defaults to the
    shape's natural interior point.
    """

    shape: Shape
    position: np.ndarray = field(default_factory=lambda: np.zeros(2))
    orientation: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    angular_rate: float = 0.0
    rotation_center: Optional[np.ndarray] = None
    reference_point: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(2))
        rc = pos.copy() if self.rotation_center is None else self.rotation_center
        object.__setattr__(self, "rotation_center", np.asarray(rc, dtype=float).reshape(2))
        if self.reference_point is None:
            ref = pos + rot2(self.orientation) @ _default_reference_local(self.shape)
        else:
            ref = np.asarray(self.reference_point, dtype=float).reshape(2)
        object.__setattr__(self, "reference_point", ref)
        if not _shape_value(self.shape, self.to_body(ref))[0] < 0:
            raise ValueError("reference point must lie strictly inside the obstacle")

    @property
    def is_static(self) -> bool:
        return not (np.any(self.velocity) or self.angular_rate)

    def to_body(self, p: np.ndarray) -> np.ndarray:
        return rot2(-self.orientation) @ (np.asarray(p, dtype=float) - self.position)

    def at_time(self, t: float) -> "Obstacle":
        """Pose after ``t`` seconds of rigid motion (exact integration)."""
        if t == 0 or self.is_static:
            return self
        c = self.rotation_center
        rot = rot2(self.angular_rate * t)
        shift = self.velocity * t
        return replace(
            self,
            position=c + shift + rot @ (self.position - c),
            orientation=self.orientation + self.angular_rate * t,
            rotation_center=c + shift,
            reference_point=c + shift + rot @ (self.reference_point - c),
        )


def _default_reference_local(shape: Shape) -> np.ndarray:
    if isinstance(shape, Circle):
        return np.zeros(2)
    if isinstance(shape, Funnel):
        return np.array(shape.offset)
    # middle of the solid band, opposite the gap
    mid = 0.5 * (shape.r_in + shape.r_out)
    back = shape.gap_heading + math.pi
    return mid * np.array([math.cos(back), math.sin(back)])


def _shape_value(shape: Shape, q: np.ndarray) -> tuple[float, np.ndarray]:
    """Boundary value and body-frame gradient for ``q`` in the body frame."""
    h, gx, gy = shape_value_xy(shape, float(q[0]), float(q[1]))
    return h, np.array([gx, gy])


def shape_value_xy(shape: Shape, qx: float, qy: float) -> tuple[float, float, float]:
    """Scalar version of ``_shape_value``: ``(h, dh/dqx, dh/dqy)``."""
    if isinstance(shape, Circle):
        rho = math.hypot(qx, qy)
        if rho == 0:
            return -shape.radius, 0.0, 0.0
        return rho - shape.radius, qx / rho, qy / rho
    if isinstance(shape, Funnel):
        vx, vy = qx - shape.offset[0], qy - shape.offset[1]
        norm4 = (vx**4 + vy**4) ** 0.25
        if norm4 == 0:
            return -shape.size, 0.0, 0.0
        n3 = norm4**3
        return norm4 - shape.size, vx**3 / n3, vy**3 / n3
    return _ring_signed_distance(shape, qx, qy)


def _ring_signed_distance(ring: OpenRing, qx: float, qy: float) -> tuple[float, float, float]:
    g = ring.gap_half_angle
    start = ring.gap_heading + g
    span = 2 * math.pi - 2 * g
    # end cap written as heading - g so the shape is exactly mirror-symmetric about its gap axis
    sx, sy = math.cos(start), math.sin(start)
    ex, ey = math.cos(ring.gap_heading - g), math.sin(ring.gap_heading - g)
    rho = math.hypot(qx, qy)
    in_arc = (math.atan2(qy, qx) - start) % (2 * math.pi) <= span

    # pieces: inner arc, outer arc, start cap, end cap
    closest = []
    for radius in (ring.r_in, ring.r_out):
        if in_arc and rho > 0:
            closest.append((qx * radius / rho, qy * radius / rho))
        else:
            ax, ay, bx, by = radius * sx, radius * sy, radius * ex, radius * ey
            da = (qx - ax) ** 2 + (qy - ay) ** 2
            db = (qx - bx) ** 2 + (qy - by) ** 2
            closest.append((ax, ay) if da <= db else (bx, by))
    for ux, uy in ((sx, sy), (ex, ey)):
        # segment from r_in * u to r_out * u
        t = (qx * ux + qy * uy - ring.r_in) / (ring.r_out - ring.r_in)
        t = min(1.0, max(0.0, t))
        rad = ring.r_in + t * (ring.r_out - ring.r_in)
        closest.append((rad * ux, rad * uy))

    dists = [math.hypot(qx - cx, qy - cy) for cx, cy in closest]
    k = min(range(4), key=dists.__getitem__)
    d = dists[k]
    inside = in_arc and ring.r_in <= rho <= ring.r_out
    if d > _FRAME_EPS:
        dx, dy = (qx - closest[k][0]) / d, (qy - closest[k][1]) / d
        return (-d, -dx, -dy) if inside else (d, dx, dy)
    # on the boundary: outward normal of the piece
    if k == 0:
        return 0.0, -qx / rho, -qy / rho
    if k == 1:
        return 0.0, qx / rho, qy / rho
    if k == 2:
        return 0.0, sy, -sx
    return 0.0, -ey, ex


def boundary_xy(obs: "Obstacle", px: float, py: float) -> tuple[float, float, float]:
    """``(h, dh/dx, dh/dy)`` in the world frame without array overhead."""
    dx, dy = px - obs.position[0], py - obs.position[1]
    if obs.orientation:
        c, s = math.cos(obs.orientation), math.sin(obs.orientation)
        h, gx, gy = shape_value_xy(obs.shape, c * dx + s * dy, -s * dx + c * dy)
        return h, c * gx - s * gy, s * gx + c * gy
    return shape_value_xy(obs.shape, dx, dy)


def surface_point_velocity(obs: Obstacle, p: np.ndarray) -> np.ndarray:
    """Velocity of the obstacle's material point currently at ``p``."""
    return obs.velocity + cross2(obs.angular_rate, np.asarray(p, dtype=float) - obs.rotation_center)


def eval_boundary(obs: Obstacle, p: np.ndarray) -> BoundaryEval:
    """Boundary value, world-frame gradient and obstacle-motion term at ``p``.

    The motion term is the partial time derivative of ``h`` at fixed ``p``,
    ``-grad_h . v(p)``, where ``v(p)`` is the rigid surface velocity.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise NonFiniteInput(f"position must be a finite 2-vector, got {p!r}")
    h, gx, gy = boundary_xy(obs, p[0], p[1])
    if math.hypot(gx, gy) < GRADIENT_EPS:
        raise GradientSingular(f"boundary gradient vanishes at {p}")
    grad = np.array([gx, gy])
    motion = 0.0 if obs.is_static else -float(grad @ surface_point_velocity(obs, p))
    return BoundaryEval(float(h), grad, motion)


def boundary_value(obs: Obstacle, p: np.ndarray) -> float:
    """``h`` only; never raises on singular gradients."""
    return float(boundary_xy(obs, p[0], p[1])[0])


def tangent_basis(n: np.ndarray) -> np.ndarray:
    """Orthonormal complement of the unit vector ``n`` as a d x (d-1) matrix.

    In the plane this is ``n`` rotated by +90 degrees. In higher dimensions
    the columns come from the Householder reflection that maps e_1 to n.
    """
    d = n.shape[0]
    if d == 2:
        return np.array([[-n[1]], [n[0]]])
    e1 = np.zeros(d)
    e1[0] = 1.0
    sign = 1.0 if n[0] >= 0 else -1.0
    v = n + sign * e1
    reflector = np.eye(d) - 2.0 * np.outer(v, v) / (v @ v)
    return reflector[:, 1:]


@dataclass(frozen=True, eq=False)
class LocalFrame:
    n: np.ndarray
    H: np.ndarray
    E: np.ndarray
    r: Optional[np.ndarray] = None
    E_r: Optional[np.ndarray] = None
    E_r_inv: Optional[np.ndarray] = None

    @property
    def w0(self) -> float:
        """Normal weight ``n^T r`` of the reference direction."""
        return float(self.n @ self.r)


def frame_from_gradient(grad: np.ndarray, r: Optional[np.ndarray] = None) -> LocalFrame:
    grad = np.asarray(grad, dtype=float)
    norm = float(np.linalg.norm(grad))
    if norm < GRADIENT_EPS:
        raise GradientSingular("cannot build a frame on a vanishing gradient")
    n = grad / norm
    H = tangent_basis(n)
    E = np.column_stack([n, H])
    if r is None:
        return LocalFrame(n, H, E)
    E_r = np.column_stack([r, H])
    gr = float(grad @ r)
    E_r_inv = None
    if abs(gr) > _FRAME_EPS * norm:
        E_r_inv = np.vstack([grad / gr, H.T - np.outer(H.T @ r, grad) / gr])
    return LocalFrame(n, H, E, r, E_r, E_r_inv)


def reference_direction(obs: Obstacle, p: np.ndarray) -> np.ndarray:
    diff = np.asarray(p, dtype=float) - obs.reference_point
    dist = math.hypot(diff[0], diff[1])
    if dist < GRADIENT_EPS:
        raise ReferenceCoincident("query point coincides with the reference point")
    return diff / dist


def local_frame(obs: Obstacle, p: np.ndarray) -> LocalFrame:
    """Normal, tangent basis and reference frame of ``obs`` seen from ``p``."""
    ev = eval_boundary(obs, p)
    return frame_from_gradient(ev.grad, reference_direction(obs, p))
