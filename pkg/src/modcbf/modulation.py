"""Dynamical-system modulation (normal and reference bases) and input-constrained variants."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .cbf import StepResult
from .errors import InfeasibleSafety, InsideObstacle, ReferenceCoincident, TangentDegenerate
from .geometry import LocalFrame, Obstacle, eval_boundary, frame_from_gradient, reference_direction, surface_point_velocity
from .qp import ActiveSetSolver, QProblem

INSIDE_TOL = 1e-6
REFERENCE_MIN_W0 = 1e-6


def default_lambdas(h: float) -> tuple[float, float]:
    """Normal and tangent stretch factors ``1 -+ 1/(h+1)`` on ``h`` clamped at zero."""
    h = max(h, 0.0)
    s = 1.0 / (h + 1.0)
    return 1.0 - s, 1.0 + s


@dataclass(frozen=True)
class ModulationSpec:
    mode: str = "normal"
    lambdas: Callable[[float], tuple[float, float]] = default_lambdas

    def __post_init__(self):
        if self.mode not in ("normal", "reference"):
            raise ValueError(f"unknown modulation mode {self.mode!r}")


class ModulationMatrix(NamedTuple):
    M: np.ndarray
    D: np.ndarray
    E: np.ndarray


def modulation_matrix(frame: LocalFrame, lam: float, lam_e: float, mode: str = "normal") -> ModulationMatrix:
    """``M = E D E^-1`` in the orthonormal normal basis or the reference basis."""
    d = frame.n.shape[0]
    D = np.diag([lam] + [lam_e] * (d - 1))
    if mode == "reference" and frame.E_r_inv is not None:
        return ModulationMatrix(frame.E_r @ D @ frame.E_r_inv, D, frame.E_r)
    return ModulationMatrix(frame.E @ D @ frame.E.T, D, frame.E)


def _frame(obs: Obstacle, x: np.ndarray, grad: np.ndarray, mode: str) -> tuple[LocalFrame, bool]:
    """Frame for ``mode``; falls back to the normal basis if the reference one degenerates."""
    if mode == "normal":
        return frame_from_gradient(grad), False
    try:
        frame = frame_from_gradient(grad, reference_direction(obs, x))
    except ReferenceCoincident:
        return frame_from_gradient(grad), True
    if frame.w0 <= REFERENCE_MIN_W0 or frame.E_r_inv is None:
        return frame, True
    return frame, False


def modulate_single(spec: ModulationSpec, obs: Obstacle, x, u_nom) -> tuple[np.ndarray, bool]:
    """``M (u_nom - xbar) + xbar`` for one obstacle. Returns ``(u, fell_back_to_normal)``."""
    x = np.asarray(x, dtype=float)
    ev = eval_boundary(obs, x)
    frame, degraded = _frame(obs, x, ev.grad, spec.mode)
    lam, lam_e = spec.lambdas(ev.h)
    mode = "normal" if degraded else spec.mode
    M = modulation_matrix(frame, lam, lam_e, mode).M
    xbar = surface_point_velocity(obs, x)
    return M @ (np.asarray(u_nom, dtype=float) - xbar) + xbar, degraded


def obstacle_weights(h_values: Sequence[float]) -> np.ndarray:
    """``w_o = prod_{j!=o} h_j / sum_k prod_{j!=k} h_j`` on ``h`` clamped at zero."""
    h = np.maximum(np.asarray(h_values, dtype=float), 0.0)
    k = h.shape[0]
    if k == 1:
        return np.ones(1)
    zero = h == 0.0
    if np.any(zero):
        return zero / zero.sum()
    # prod_{j!=o} h_j = prod(h) / h_o; normalising cancels prod(h), scaling by min(h) avoids overflow
    inv = h.min() / h
    return inv / inv.sum()


def modds_step(spec: ModulationSpec, obstacles: Sequence[Obstacle], x, u_nom) -> np.ndarray:
    """Weighted combination of the per-obstacle modulated velocities."""
    x = np.asarray(x, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float)
    if not obstacles:
        return u_nom.copy()
    outs, hs = [], []
    for obs in obstacles:
        h = eval_boundary(obs, x).h
        if h < -INSIDE_TOL:
            raise InsideObstacle(f"state {x} lies inside obstacle {obs.name or obstacles.index(obs)}")
        outs.append(modulate_single(spec, obs, x, u_nom)[0])
        hs.append(h)
    w = obstacle_weights(hs)
    return np.einsum("k,kd->d", w, np.array(outs))


def cbf_equivalent_lambdas(grad, u_nom, alpha: float) -> tuple[float, float]:
    """Stretch factors making normal modulation reproduce the CBF-QP output."""
    drift = float(np.asarray(grad) @ np.asarray(u_nom))
    if drift >= -alpha:
        return 1.0, 1.0
    return -alpha / drift, 1.0


def constrain_speed(u_unc, n, xbar, u_ub: float) -> np.ndarray:
    """Closest direction to ``u_unc`` with ``||u|| <= u_ub`` that keeps the boundary impenetrable.

    Maximises ``<u_unc, u>`` subject to the speed cap and ``n.u >= min(n.xbar, n.u_unc)``.
    """
    u_unc = np.asarray(u_unc, dtype=float)
    n = np.asarray(n, dtype=float)
    if not u_ub > 0:
        raise ValueError("speed cap must be positive")
    norm = float(np.linalg.norm(u_unc))
    if norm <= u_ub:
        return u_unc.copy()
    un = float(n @ u_unc)
    v_n = min(float(n @ np.asarray(xbar, dtype=float)), un)
    if v_n > u_ub:
        raise InfeasibleSafety(f"obstacle recedes normal speed {v_n:.3f} exceeds the cap {u_ub}")
    if u_ub / norm * un >= v_n:
        return u_unc * (u_ub / norm)
    tangent = u_unc - un * n
    v_e = float(np.linalg.norm(tangent))
    if v_e < 1e-10:
        raise TangentDegenerate("no tangential component to redistribute speed into")
    return v_n * n + math.sqrt(u_ub**2 - v_n**2) / v_e * tangent


def constrain_velocity(u_unc, n, xbar, lower, upper, solver: Optional[ActiveSetSolver] = None) -> np.ndarray:
    """Projection of ``u_unc`` onto the box intersected with the impenetrability half-plane."""
    u_unc = np.asarray(u_unc, dtype=float)
    n = np.asarray(n, dtype=float)
    v_n = min(float(n @ np.asarray(xbar, dtype=float)), float(n @ u_unc))
    qp = QProblem(2.0 * np.eye(u_unc.shape[0]), -2.0 * u_unc, n[None, :], [v_n], lower=lower, upper=upper)
    sol = (solver or ActiveSetSolver()).solve(qp)
    if not sol.optimal:
        raise InfeasibleSafety("box bounds cannot satisfy the impenetrability row")
    return np.clip(sol.z, lower, upper)


class ModDS:
    """Mod-DS controller for a fully actuated planar robot.

    ``constraint`` is ``None``, ``{"speed": u_ub}`` or ``{"lower": .., "upper": ..}``.
    Constrained variants use the nearest obstacle's normal and surface velocity.
    """

    def __init__(self, spec: ModulationSpec = ModulationSpec(), constraint: Optional[dict] = None, sensing_range: Optional[float] = None):
        self.spec = spec
        self.constraint = constraint
        self.sensing_range = sensing_range
        self.solver = ActiveSetSolver()
        self.name = "mod_" + spec.mode

    def reset(self):
        self.solver.reset()

    def step(self, x, u_nom, obstacles, target=None) -> StepResult:
        x = np.asarray(x, dtype=float)
        u_nom = np.asarray(u_nom, dtype=float)
        sensed = [o for o in obstacles if self.sensing_range is None or eval_boundary(o, x).h <= self.sensing_range]
        try:
            u = modds_step(self.spec, sensed, x, u_nom)
        except InsideObstacle:
            return StepResult(np.zeros_like(u_nom), True, True, {"inside": True})
        if self.constraint is None:
            return StepResult(u)
        if not sensed:
            if "speed" in self.constraint:
                norm = float(np.linalg.norm(u))
                cap = self.constraint["speed"]
                return StepResult(u * (cap / norm) if norm > cap else u)
            return StepResult(np.clip(u, self.constraint["lower"], self.constraint["upper"]))
        nearest = min(sensed, key=lambda o: eval_boundary(o, x).h)
        ev = eval_boundary(nearest, x)
        n = ev.grad / np.linalg.norm(ev.grad)
        xbar = surface_point_velocity(nearest, x)
        try:
            if "speed" in self.constraint:
                u = constrain_speed(u, n, xbar, self.constraint["speed"])
            else:
                u = constrain_velocity(u, n, xbar, self.constraint["lower"], self.constraint["upper"], self.solver)
        except (InfeasibleSafety, TangentDegenerate) as exc:
            return StepResult(np.zeros_like(u_nom), True, True, {"error": str(exc)})
        return StepResult(u)


class CbfEquivalentModDS:
    """Normal modulation with stretch factors chosen so its output equals the CBF-QP.

    Single static obstacle only (the nearest one is used).
    """

    name = "mod_equivalent"

    def __init__(self, alpha):
        self.alpha = alpha

    def reset(self):
        pass

    def step(self, x, u_nom, obstacles, target=None) -> StepResult:
        x = np.asarray(x, dtype=float)
        u_nom = np.asarray(u_nom, dtype=float)
        if not obstacles:
            return StepResult(u_nom.copy())
        obs = min(obstacles, key=lambda o: eval_boundary(o, x).h)
        ev = eval_boundary(obs, x)
        lams = cbf_equivalent_lambdas(ev.grad, u_nom, self.alpha(ev.h))
        return StepResult(modulate_single(ModulationSpec("normal", lambda h: lams), obs, x, u_nom)[0])
