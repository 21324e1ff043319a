"""CBF-QP safety filters and their single-obstacle closed forms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateRow, GradientSingular
from .geometry import BoundaryEval, Obstacle, boundary_value, eval_boundary
from .models import InputLimits, RobotModel, affine_fields, augmented_barrier
from .qp import ActiveSetSolver, QProblem

SENSING_RANGE = 3.0
SPEED_CAP_SIDES = 16


@dataclass(frozen=True)
class AlphaFn:
    """Extended class-K function: ``gain * h`` or ``gain * h**3``."""

    family: str = "linear"
    gain: float = 1.0

    def __post_init__(self):
        if self.family not in ("linear", "cubic"):
            raise ValueError(f"unknown alpha family {self.family!r}")
        if not self.gain > 0:
            raise ValueError("alpha gain must be positive")

    def __call__(self, h: float) -> float:
        if self.family == "linear":
            return self.gain * h
        return self.gain * h**3


@dataclass(frozen=True)
class BarrierMode:
    """Which barrier a controller constrains: positional ``h`` or heading-augmented ``h_aug``."""

    kind: str = "positional"
    w: float = 0.3

    def __post_init__(self):
        if self.kind not in ("positional", "augmented"):
            raise ValueError(f"unknown barrier mode {self.kind!r}")


POSITIONAL = BarrierMode()


def state_barrier(model: RobotModel, obs: Obstacle, x, mode: BarrierMode = POSITIONAL) -> BoundaryEval:
    """Barrier value with its gradient over the full state vector."""
    x = np.asarray(x, dtype=float)
    if mode.kind == "augmented":
        if model.state_dim != 3:
            raise ValueError("augmented barrier needs a unicycle-type model")
        return augmented_barrier(obs, x, mode.w)
    ev = eval_boundary(obs, x[:2])
    if model.state_dim == 2:
        return ev
    return BoundaryEval(ev.h, np.append(ev.grad, 0.0), ev.motion_term)


@dataclass(eq=False)
class CbfRow:
    """``a_u . u >= b`` encoding ``L_f h + L_g h u + motion_term >= -alpha(h)``."""

    a_u: np.ndarray
    b: float
    obstacle: int
    h: float
    grad: np.ndarray


def build_cbf_rows(
    model: RobotModel,
    obstacles: Sequence[Obstacle],
    x,
    alpha: AlphaFn,
    mode: BarrierMode = POSITIONAL,
    sensing_range: Optional[float] = SENSING_RANGE,
) -> tuple[list[CbfRow], list[int]]:
    """One row per sensed obstacle. Returns ``(rows, skipped)``.

    Obstacles with a singular gradient at ``x`` are skipped and reported.
    """
    x = np.asarray(x, dtype=float)
    f, g = affine_fields(model, x)
    rows, skipped = [], []
    for i, obs in enumerate(obstacles):
        if sensing_range is not None and boundary_value(obs, x[:2]) > sensing_range:
            continue
        try:
            ev = state_barrier(model, obs, x, mode)
        except GradientSingular:
            skipped.append(i)
            continue
        a_u = ev.grad @ g
        b = -alpha(ev.h) - float(ev.grad @ f) - ev.motion_term
        rows.append(CbfRow(a_u, float(b), i, ev.h, ev.grad))
    return rows, skipped


def speed_cap_rows(cap: float, p: int = 2, sides: int = SPEED_CAP_SIDES) -> tuple[np.ndarray, np.ndarray]:
    """Inscribed polygon ``-e_k . u >= -cap cos(pi/sides)`` approximating ``||u|| <= cap``."""
    if p != 2:
        raise ValueError("speed cap polygon is only defined for 2 inputs")
    ang = 2 * np.pi * np.arange(sides) / sides
    normals = np.column_stack([np.cos(ang), np.sin(ang)])
    return -normals, np.full(sides, -cap * math.cos(math.pi / sides))


@dataclass(eq=False)
class StepResult:
    u: np.ndarray
    infeasible: bool = False
    fallback: bool = False
    info: dict = field(default_factory=dict)


class QpFilter:
    """Shared machinery: minimum-norm correction of ``u_nom`` under linear rows.

    Decision vector ``z = [u, extra]``; extra variables carry unit cost.
    """

    def __init__(self, model: RobotModel, limits: Optional[InputLimits] = None):
        self.model = model
        self.limits = limits if limits is not None else model.limits
        self.solver = ActiveSetSolver()

    def reset(self):
        self.solver.reset()

    def _limit_rows(self, n_extra: int):
        p = self.model.input_dim
        G = np.zeros((0, p + n_extra))
        h = np.zeros(0)
        lower = upper = None
        lim = self.limits
        if lim is not None:
            if lim.speed_cap is not None:
                Gs, hs = speed_cap_rows(lim.speed_cap, p)
                G = np.vstack([G, np.hstack([Gs, np.zeros((Gs.shape[0], n_extra))])])
                h = np.concatenate([h, hs])
            if lim.has_box:
                lower = np.concatenate([lim.lower, np.full(n_extra, -np.inf)])
                upper = np.concatenate([lim.upper, np.full(n_extra, np.inf)])
        return G, h, lower, upper

    def _solve(self, u_nom, rows: Sequence[tuple[np.ndarray, float]], n_extra: int = 0, A_eq=None, b_eq=None):
        p = self.model.input_dim
        n = p + n_extra
        Gl, hl, lower, upper = self._limit_rows(n_extra)
        if rows:
            Gr = np.array([np.concatenate([a, np.zeros(n - len(a))]) for a, _ in rows])
            hr = np.array([b for _, b in rows])
            G, h = np.vstack([Gr, Gl]), np.concatenate([hr, hl])
        else:
            G, h = Gl, hl
        c = np.concatenate([-2.0 * np.asarray(u_nom, dtype=float), np.zeros(n_extra)])
        qp = QProblem(2.0 * np.eye(n), c, G, h, A_eq, b_eq, lower, upper)
        return self.solver.solve(qp)


class CbfQP(QpFilter):
    """Standard CBF-QP: ``min ||u - u_nom||^2`` subject to one barrier row per obstacle."""

    name = "cbf"

    def __init__(
        self,
        model: RobotModel,
        alpha: AlphaFn = AlphaFn(),
        mode: BarrierMode = POSITIONAL,
        sensing_range: Optional[float] = SENSING_RANGE,
        limits: Optional[InputLimits] = None,
    ):
        super().__init__(model, limits)
        self.alpha = alpha
        self.mode = mode
        self.sensing_range = sensing_range

    def rows(self, x, obstacles):
        return build_cbf_rows(self.model, obstacles, x, self.alpha, self.mode, self.sensing_range)

    def step(self, x, u_nom, obstacles, target=None) -> StepResult:
        rows, skipped = self.rows(x, obstacles)
        sol = self._solve(u_nom, [(r.a_u, r.b) for r in rows])
        info = {"rows": len(rows), "skipped": skipped, "ill_conditioned": sol.ill_conditioned}
        if not sol.optimal:
            return StepResult(np.zeros(self.model.input_dim), True, True, info)
        return StepResult(sol.z, False, False, info)


def cbf_qp_step(model, obstacles, x, u_nom, alpha: AlphaFn = AlphaFn(), limits=None, mode=POSITIONAL) -> StepResult:
    """One-shot CBF-QP (no warm start)."""
    return CbfQP(model, alpha, mode, limits=limits).step(x, u_nom, obstacles)


def cbf_closed_form(model: RobotModel, x, u_nom, obs: Obstacle, alpha: AlphaFn = AlphaFn(), mode=POSITIONAL) -> np.ndarray:
    """Single-obstacle CBF-QP without input limits, solved in closed form.

    The class-K term includes the obstacle-motion term.
    """
    u_nom = np.asarray(u_nom, dtype=float)
    ev = state_barrier(model, obs, x, mode)
    f, g = affine_fields(model, x)
    lgh = ev.grad @ g
    slack = float(ev.grad @ f) + float(lgh @ u_nom) + alpha(ev.h) + ev.motion_term
    if slack >= 0:
        return u_nom.copy()
    denom = float(lgh @ lgh)
    if denom < 1e-18:
        raise DegenerateRow("violated barrier row has no control authority")
    return u_nom - lgh * slack / denom

