"""First-order geodesic rollouts on barrier isosurfaces and exit-direction selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import GradientSingular, ProjectionCollapse
from .geometry import GRADIENT_EPS, Obstacle, boundary_xy, eval_boundary, tangent_basis
from .models import HESSIAN_STEP, augmented_barrier

COLLAPSE_EPS = 1e-10

GradientField = Callable[[np.ndarray], np.ndarray]


def distance_penalty(x: np.ndarray, target: np.ndarray) -> float:
    """Planar distance from the state's position to the target."""
    return math.hypot(x[0] - target[0], x[1] - target[1])


@dataclass(frozen=True)
class GeodesicParams:
    beta: float = 0.05
    horizon: int = 60
    candidates: Optional[int] = None
    penalty: Callable[[np.ndarray, np.ndarray], float] = distance_penalty

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("geodesic step beta must be positive")
        if self.horizon < 1:
            raise ValueError("geodesic horizon must be at least 1")

    def candidate_count(self, d: int) -> int:
        m = self.candidates if self.candidates is not None else (2 if d == 2 else 20)
        if m < 2 ** (d - 1):
            raise ValueError(f"need at least {2 ** (d - 1)} candidates in dimension {d}")
        return m


class GeodesicRollout(NamedTuple):
    path: np.ndarray
    directions: np.ndarray
    potential: float


class ExitDirection(NamedTuple):
    phi: np.ndarray
    index: int
    potentials: np.ndarray
    collapsed: bool
    candidates: list


class PositionField:
    """Gradient of an obstacle's positional barrier (a ``GradientField``)."""

    def __init__(self, obs: Obstacle):
        self.obstacle = obs

    def __call__(self, p: np.ndarray) -> np.ndarray:
        return eval_boundary(self.obstacle, p[:2]).grad


def position_field(obs: Obstacle) -> PositionField:
    return PositionField(obs)


class AugmentedField:
    """Gradient of the heading-augmented barrier over ``[p_x, p_y, theta]``."""

    def __init__(self, obs: Obstacle, w: float):
        self.obstacle = obs
        self.w = w

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return augmented_barrier(self.obstacle, x, self.w).grad


def augmented_field(obs: Obstacle, w: float) -> AugmentedField:
    return AugmentedField(obs, w)


def _augmented_grad_xy(obs: Obstacle, w: float, px: float, py: float, th: float) -> tuple[float, float, float]:
    """Scalar version of ``augmented_barrier(...).grad`` (same central-difference Hessian)."""
    _, gx, gy = boundary_xy(obs, px, py)
    c, s = math.cos(th), math.sin(th)
    if not w:
        return gx, gy, 0.0
    k = HESSIAN_STEP
    _, ax, ay = boundary_xy(obs, px + k, py)
    _, bx, by = boundary_xy(obs, px - k, py)
    _, cx, cy = boundary_xy(obs, px, py + k)
    _, dx, dy = boundary_xy(obs, px, py - k)
    hxx = (ax - bx) / (2 * k)
    hyy = (cy - dy) / (2 * k)
    hxy = 0.5 * ((ay - by) / (2 * k) + (cx - dx) / (2 * k))
    return gx + w * (hxx * c + hxy * s), gy + w * (hxy * c + hyy * s), w * (-gx * s + gy * c)


def _tangent_projector(grad: np.ndarray) -> np.ndarray:
    n = grad / np.linalg.norm(grad)
    H = tangent_basis(n)
    return H @ H.T


def candidate_directions(H: np.ndarray, m: int) -> list[np.ndarray]:
    """Unit directions in ``span(H)``: ``+-H[:, 0]`` in the plane, ``m`` evenly spaced ones otherwise."""
    d = H.shape[0]
    if d == 2:
        return [H[:, 0].copy(), -H[:, 0]]
    ang = 2 * np.pi * np.arange(m) / m
    return [math.cos(a) * H[:, 0] + math.sin(a) * H[:, 1] for a in ang]


def geodesic_rollout(field: GradientField, x0, e0, params: GeodesicParams, target) -> GeodesicRollout:
    """Step ``x <- x + beta H H^T e`` and ``e <- unit(H H^T e)`` along the isosurface through ``x0``."""
    x = np.asarray(x0, dtype=float).copy()
    target = np.asarray(target, dtype=float)
    e = np.asarray(e0, dtype=float)
    if isinstance(field, PositionField) and x.shape == (2,):
        return _scalar_rollout(lambda v: boundary_xy(field.obstacle, v[0], v[1])[1:], x, e, params, target)
    if isinstance(field, AugmentedField) and x.shape == (3,):
        return _scalar_rollout(lambda v: _augmented_grad_xy(field.obstacle, field.w, *v), x, e, params, target)
    proj = _tangent_projector(field(x)) @ e
    norm = np.linalg.norm(proj)
    if norm < COLLAPSE_EPS:
        raise ProjectionCollapse("initial direction is normal to the isosurface")
    e = proj / norm
    path, dirs = [x.copy()], [e.copy()]
    potential = 0.0
    for _ in range(params.horizon):
        proj = _tangent_projector(field(x)) @ e
        norm = np.linalg.norm(proj)
        if norm < COLLAPSE_EPS:
            raise ProjectionCollapse("rollout direction collapsed onto the normal")
        x = x + params.beta * proj
        e = proj / norm
        potential += params.beta * params.penalty(x, target)
        path.append(x.copy())
        dirs.append(e.copy())
    return GeodesicRollout(np.array(path), np.array(dirs), potential)


def _scalar_rollout(grad_fn, x0, e0, params: GeodesicParams, target) -> GeodesicRollout:
    """``geodesic_rollout`` on Python floats, using ``H H^T e = e - n (n . e)``."""

    def project(x, e):
        g = grad_fn(x)
        gn = math.sqrt(sum(v * v for v in g))
        if gn < GRADIENT_EPS:
            raise GradientSingular(f"barrier gradient vanishes at {x}")
        dot = sum(gi * ei for gi, ei in zip(g, e)) / gn
        return [ei - dot * gi / gn for gi, ei in zip(g, e)]

    x = [float(v) for v in x0]
    t = project(x, [float(v) for v in e0])
    norm = math.sqrt(sum(v * v for v in t))
    if norm < COLLAPSE_EPS:
        raise ProjectionCollapse("initial direction is normal to the isosurface")
    e = [v / norm for v in t]
    path, dirs = [x], [e]
    potential = 0.0
    beta, penalty = params.beta, params.penalty
    for _ in range(params.horizon):
        t = project(x, e)
        norm = math.sqrt(sum(v * v for v in t))
        if norm < COLLAPSE_EPS:
            raise ProjectionCollapse("rollout direction collapsed onto the normal")
        x = [xi + beta * ti for xi, ti in zip(x, t)]
        e = [v / norm for v in t]
        potential += beta * penalty(x, target)
        path.append(x)
        dirs.append(e)
    return GeodesicRollout(np.array(path), np.array(dirs), potential)


def exit_direction(field: GradientField, x, target, params: GeodesicParams = GeodesicParams()) -> ExitDirection:
    """Candidate tangent direction whose rollout accumulates the least penalty.

    Ties go to the lowest candidate index. If every rollout collapses, returns
    a zero vector with ``collapsed=True``.
    """
    x = np.asarray(x, dtype=float)
    grad = field(x)
    n = grad / np.linalg.norm(grad)
    H = tangent_basis(n)
    cands = candidate_directions(H, params.candidate_count(x.shape[0]))
    potentials = np.full(len(cands), np.inf)
    for i, e in enumerate(cands):
        try:
            potentials[i] = geodesic_rollout(field, x, e, params, target).potential
        except (ProjectionCollapse, GradientSingular):
            pass
    if not np.any(np.isfinite(potentials)):
        return ExitDirection(np.zeros_like(x), -1, potentials, True, cands)
    best = int(np.argmin(potentials))
    return ExitDirection(cands[best], best, potentials, False, cands)
