"""Modulated CBF-QP controllers.

The reference variant adds a slack-penalised projection of the input
correction onto the tangent space along the reference direction. The
on-manifold variant adds a liveness row ``phi^T (f + g u) >= gamma`` along
a geodesic exit direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cbf import POSITIONAL, SENSING_RANGE, AlphaFn, BarrierMode, CbfQP, StepResult, state_barrier
from .errors import DegenerateReference, GradientSingular, ReferenceCoincident
from .geodesic import GeodesicParams, augmented_field, exit_direction, position_field
from .geometry import LocalFrame, Obstacle, boundary_value, boundary_xy, eval_boundary, frame_from_gradient, reference_direction
from .models import InputLimits, RobotModel, affine_fields

MIN_W0 = 1e-6
SIGHT_STEP = 0.05


@dataclass(frozen=True, eq=False)
class ExplicitRmcbfWork:
    """Intermediate matrices of the explicit reference MCBF-QP solution."""

    F: np.ndarray
    A: np.ndarray
    W: np.ndarray
    w0: float
    Lam: np.ndarray
    Lam_inv: np.ndarray
    k: float
    E: np.ndarray


def _reference_frame(grad: np.ndarray, r: np.ndarray) -> LocalFrame:
    frame = frame_from_gradient(grad, r)
    if frame.w0 <= MIN_W0 or frame.E_r_inv is None:
        raise DegenerateReference(f"n^T r = {frame.w0:.3g} is too small")
    return frame


def tangent_projection(grad: np.ndarray, r: np.ndarray) -> np.ndarray:
    """``H^T (I - r grad^T / (grad^T r))``, the tangential coordinates along ``r``."""
    frame = _reference_frame(grad, r)
    d = grad.shape[0]
    return frame.H.T @ (np.eye(d) - np.outer(r, grad) / float(grad @ r))


def explicit_work(grad, r) -> ExplicitRmcbfWork:
    grad = np.asarray(grad, dtype=float)
    r = np.asarray(r, dtype=float)
    frame = _reference_frame(grad, r)
    d = grad.shape[0]
    w0 = frame.w0
    W = frame.H.T @ r
    S = np.outer(r, frame.n) / w0
    IS = np.eye(d) - S
    F = 2.0 * (np.eye(d) + IS.T @ IS)
    Finv_g = np.linalg.solve(F, grad)
    A = -Finv_g / float(grad @ Finv_g)
    Lam = np.empty((d, d))
    Lam[0, 0] = 2.0 / w0**2
    Lam[0, 1:] = Lam[1:, 0] = -2.0 * W / w0
    Lam[1:, 1:] = 4.0 * np.eye(d - 1)
    k = w0**2 / (1.0 + w0**2)
    Lam_inv = np.empty((d, d))
    Lam_inv[0, 0] = k
    Lam_inv[0, 1:] = Lam_inv[1:, 0] = k * W / (2.0 * w0)
    Lam_inv[1:, 1:] = np.eye(d - 1) / 4.0 + k * np.outer(W, W) / (4.0 * w0**2)
    return ExplicitRmcbfWork(F, A, W, w0, Lam, Lam_inv, k, frame.E)


def rmcbf_closed_form(x, u_nom, obs: Obstacle, alpha: AlphaFn = AlphaFn()) -> np.ndarray:
    """Explicit reference MCBF-QP for a fully actuated robot, one obstacle, no limits."""
    x = np.asarray(x, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float)
    ev = eval_boundary(obs, x)
    a = alpha(ev.h) + ev.motion_term
    drift = float(ev.grad @ u_nom)
    if drift + a >= 0:
        return u_nom.copy()
    work = explicit_work(ev.grad, reference_direction(obs, x))
    return u_nom + work.A * (drift + a)


def rmcbf_expanded_form(x, u_nom, obs: Obstacle, alpha: AlphaFn = AlphaFn()) -> np.ndarray:
    """Same solution written through ``n``, ``r`` and ``w0`` only."""
    x = np.asarray(x, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float)
    ev = eval_boundary(obs, x)
    a = alpha(ev.h) + ev.motion_term
    if float(ev.grad @ u_nom) + a >= 0:
        return u_nom.copy()
    frame = _reference_frame(ev.grad, reference_direction(obs, x))
    n, r, w0 = frame.n, frame.r, frame.w0
    gnorm = float(np.linalg.norm(ev.grad))
    return u_nom - (w0 * n + r) * float(n @ u_nom) / (2 * w0) - a * (n + r / w0) / (2 * gnorm)


def mcbf_difference(x, u_nom, obs: Obstacle) -> np.ndarray:
    """Reference MCBF-QP minus CBF-QP output on the boundary (class-K term zero)."""
    x = np.asarray(x, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float)
    ev = eval_boundary(obs, x)
    frame = _reference_frame(ev.grad, reference_direction(obs, x))
    un = float(frame.n @ u_nom)
    if float(ev.grad @ u_nom) >= 0:
        return np.zeros_like(u_nom)
    return -(frame.r - frame.w0 * frame.n) * un / (2 * frame.w0)


def _lift(v: np.ndarray, d: int) -> np.ndarray:
    return v if v.shape[0] == d else np.concatenate([v, np.zeros(d - v.shape[0])])


def _nearest(obstacles, x, sensing_range) -> int:
    best, best_h = -1, np.inf
    for i, obs in enumerate(obstacles):
        h = boundary_value(obs, x[:2])
        if (sensing_range is None or h <= sensing_range) and h < best_h:
            best, best_h = i, h
    return best


def blocks_segment(obs: Obstacle, p, target, step: float = SIGHT_STEP) -> bool:
    """True if ``obs`` intersects the straight segment from ``p`` to ``target`` (sampled every ``step``)."""
    px, py = float(p[0]), float(p[1])
    dx, dy = float(target[0]) - px, float(target[1]) - py
    k = max(1, int(math.ceil(math.hypot(dx, dy) / step)))
    for i in range(1, k + 1):
        if boundary_xy(obs, px + dx * i / k, py + dy * i / k)[0] < 0:
            return True
    return False


class RMcbfQP(CbfQP):
    """Reference MCBF-QP. Projection rows act on the nearest sensed obstacle."""

    name = "rmcbf"

    def step(self, x, u_nom, obstacles, target=None) -> StepResult:
        x = np.asarray(x, dtype=float)
        u_nom = np.asarray(u_nom, dtype=float)
        rows, skipped = self.rows(x, obstacles)
        info = {"rows": len(rows), "skipped": skipped, "degraded": False}
        row_pairs = [(r.a_u, r.b) for r in rows]
        idx = _nearest(obstacles, x, self.sensing_range)
        d = self.model.state_dim
        A_eq = b_eq = None
        n_extra = 0
        if idx >= 0:
            try:
                obs = obstacles[idx]
                ev = state_barrier(self.model, obs, x, self.mode)
                r = _lift(reference_direction(obs, x[:2]), d)
                P = tangent_projection(ev.grad, r)
                Pg = P @ affine_fields(self.model, x).g
                n_extra = d - 1
                A_eq = np.hstack([Pg, -np.eye(n_extra)])
                b_eq = Pg @ u_nom
            except (DegenerateReference, ReferenceCoincident, GradientSingular):
                info["degraded"] = True
        sol = self._solve(u_nom, row_pairs, n_extra, A_eq, b_eq)
        if not sol.optimal:
            return StepResult(np.zeros(self.model.input_dim), True, True, info)
        info["slack"] = sol.z[self.model.input_dim:]
        return StepResult(sol.z[: self.model.input_dim], False, False, info)


def rmcbf_qp_step(model, obstacles, x, u_nom, alpha: AlphaFn = AlphaFn(), limits=None, mode=POSITIONAL) -> StepResult:
    return RMcbfQP(model, alpha, mode, limits=limits).step(x, u_nom, obstacles)


class OnMMcbfQP(CbfQP):
    """On-manifold MCBF-QP: CBF rows plus a geodesic exit-direction row on the nearest obstacle.

    The exit row is active while the nearest sensed obstacle is within
    ``activation_band`` and blocks the straight segment to the target.
    Infeasibility ladder: drop the exit row, then brake.
    """

    name = "onm_mcbf"

    def __init__(
        self,
        model: RobotModel,
        alpha: AlphaFn = AlphaFn(),
        gamma: float = 1.0,
        mode: BarrierMode = POSITIONAL,
        activation_band: float = 1.0,
        geodesic: Optional[GeodesicParams] = None,
        sensing_range: Optional[float] = SENSING_RANGE,
        limits: Optional[InputLimits] = None,
    ):
        super().__init__(model, alpha, mode, sensing_range, limits)
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        self.gamma = gamma
        self.activation_band = activation_band
        self.geodesic = geodesic or GeodesicParams()

    def exit_row(self, x, obstacles, target):
        """``(a_u, b, phi)`` of the liveness row, or ``None`` when inactive."""
        idx = _nearest(obstacles, x, self.sensing_range)
        if idx < 0 or target is None:
            return None
        obs = obstacles[idx]
        if boundary_value(obs, x[:2]) >= self.activation_band or not blocks_segment(obs, x[:2], target):
            return None
        d = self.model.state_dim
        try:
            if self.mode.kind == "augmented":
                ex = exit_direction(augmented_field(obs, self.mode.w), x, target, self.geodesic)
            else:
                ex = exit_direction(position_field(obs), x[:2], target, self.geodesic)
        except GradientSingular:
            return None
        if ex.collapsed:
            return None
        phi = _lift(ex.phi, d)
        f, g = affine_fields(self.model, x)
        return phi @ g, self.gamma - float(phi @ f), phi

    def step(self, x, u_nom, obstacles, target=None) -> StepResult:
        x = np.asarray(x, dtype=float)
        rows, skipped = self.rows(x, obstacles)
        pairs = [(r.a_u, r.b) for r in rows]
        info = {"rows": len(rows), "skipped": skipped, "phi": None, "phi_dropped": False}
        extra = self.exit_row(x, obstacles, target)
        infeasible = False
        if extra is not None:
            info["phi"] = extra[2]
            sol = self._solve(u_nom, pairs + [(extra[0], extra[1])])
            if sol.optimal:
                return StepResult(sol.z, False, False, info)
            infeasible = True
            info["phi_dropped"] = True
            info["phi"] = None
        sol = self._solve(u_nom, pairs)
        if sol.optimal:
            return StepResult(sol.z, infeasible, False, info)
        return StepResult(np.zeros(self.model.input_dim), True, True, info)
