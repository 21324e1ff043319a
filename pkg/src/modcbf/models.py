"""Control-affine robot models, nominal controllers and the augmented barrier."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from .errors import DimensionMismatch
from .geometry import BoundaryEval, Obstacle, eval_boundary

HESSIAN_STEP = 1e-4


class ModelKind(str, Enum):
    SINGLE_INTEGRATOR = "single_integrator"
    UNICYCLE = "unicycle"
    SHIFTED_UNICYCLE = "shifted_unicycle"


@dataclass(frozen=True, eq=False)
class InputLimits:
    """Optional speed cap ``||u||_2 <= speed_cap`` and box ``lower <= u <= upper``."""

    speed_cap: Optional[float] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.speed_cap is not None and not self.speed_cap > 0:
            raise ValueError("speed cap must be positive")
        if (self.lower is None) != (self.upper is None):
            raise ValueError("box bounds need both lower and upper")
        if self.lower is not None:
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            if lo.shape != hi.shape or np.any(lo >= hi):
                raise ValueError("box bounds must satisfy lower < upper componentwise")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)

    @property
    def has_box(self) -> bool:
        return self.lower is not None


@dataclass(frozen=True)
class RobotModel:
    kind: ModelKind = ModelKind.SINGLE_INTEGRATOR
    a: float = 0.3
    w: float = 0.3
    limits: Optional[InputLimits] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.kind is ModelKind.SHIFTED_UNICYCLE and not self.a > 0:
            raise ValueError("shift a must be positive")

    @property
    def state_dim(self) -> int:
        return 2 if self.kind is ModelKind.SINGLE_INTEGRATOR else 3

    @property
    def input_dim(self) -> int:
        return 2

    @property
    def fully_actuated(self) -> bool:
        return self.kind is ModelKind.SINGLE_INTEGRATOR


class AffineFields(NamedTuple):
    f: np.ndarray
    g: np.ndarray


def _check_state(model: RobotModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.state_dim,):
        raise DimensionMismatch(f"{model.kind.value} expects a {model.state_dim}-vector state, got shape {x.shape}")
    return x


def affine_fields(model: RobotModel, x) -> AffineFields:
    x = _check_state(model, x)
    d = model.state_dim
    if model.kind is ModelKind.SINGLE_INTEGRATOR:
        return AffineFields(np.zeros(d), np.eye(2))
    c, s = math.cos(x[2]), math.sin(x[2])
    if model.kind is ModelKind.UNICYCLE:
        g = np.array([[c, 0.0], [s, 0.0], [0.0, 1.0]])
    else:
        g = np.array([[c, -model.a * s], [s, model.a * c], [0.0, 1.0]])
    return AffineFields(np.zeros(d), g)


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(angle, 2 * math.pi)
    return math.pi if w == -math.pi else w


def propagate(model: RobotModel, x, u, dt: float) -> np.ndarray:
    """One explicit Euler step of ``x' = f + g u``."""
    x = _check_state(model, x)
    u = np.asarray(u, dtype=float)
    if u.shape != (model.input_dim,):
        raise DimensionMismatch(f"expected a {model.input_dim}-vector input, got shape {u.shape}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    f, g = affine_fields(model, x)
    nxt = x + (f + g @ u) * dt
    if model.state_dim == 3:
        nxt[2] = wrap_angle(nxt[2])
    return nxt


class Nominal(NamedTuple):
    u: np.ndarray
    at_target: bool


def nominal_linear(position, target, epsilon: Optional[float] = None) -> Nominal:
    """Linear attractor ``u = -eps (x - target)``.

    With ``epsilon=None`` the gain is ``1/||x - target||`` (unit speed).
    """
    diff = np.asarray(position, dtype=float)[:2] - np.asarray(target, dtype=float)
    dist = math.hypot(diff[0], diff[1])
    if dist == 0.0:
        return Nominal(np.zeros(2), True)
    gain = 1.0 / dist if epsilon is None else epsilon
    return Nominal(-gain * diff, False)


def nominal_unicycle(x, target, dt: float, omega_limit: Optional[float] = None) -> Nominal:
    """Unicycle nominal ``(v, omega)`` tracking the unit-speed linear field."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    lin = nominal_linear(x, target)
    if lin.at_target:
        return Nominal(np.zeros(2), True)
    psi = wrap_angle(math.atan2(lin.u[1], lin.u[0]) - x[2])
    omega = psi / dt
    if omega_limit is not None:
        omega = min(max(omega, -omega_limit), omega_limit)
    return Nominal(np.array([math.hypot(lin.u[0], lin.u[1]), omega]), False)


def position_hessian(obs: Obstacle, p: np.ndarray, step: float = HESSIAN_STEP) -> np.ndarray:
    """Central-difference Hessian of ``h`` built from the analytic gradient."""
    hess = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        hess[:, j] = (eval_boundary(obs, p + e).grad - eval_boundary(obs, p - e).grad) / (2 * step)
    return 0.5 * (hess + hess.T)


def _h_aug(obs: Obstacle, x: np.ndarray, w: float) -> float:
    ev = eval_boundary(obs, x[:2])
    return ev.h + w * (ev.grad[0] * math.cos(x[2]) + ev.grad[1] * math.sin(x[2]))


def augmented_barrier(obs: Obstacle, x, w: float = 0.3, time_step: float = 1e-5) -> BoundaryEval:
    """Heading-aware barrier ``h + w (h_x cos(theta) + h_y sin(theta))``.

    The returned gradient is with respect to ``[p_x, p_y, theta]``. The
    motion term of a moving obstacle is a central difference in time.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (3,):
        raise DimensionMismatch("augmented barrier needs a [p_x, p_y, theta] state")
    p = x[:2]
    ev = eval_boundary(obs, p)
    heading = np.array([math.cos(x[2]), math.sin(x[2])])
    h = ev.h + w * float(ev.grad @ heading)
    if w:
        grad_p = ev.grad + w * position_hessian(obs, p) @ heading
    else:
        grad_p = ev.grad.copy()
    d_theta = w * (-ev.grad[0] * heading[1] + ev.grad[1] * heading[0])
    grad = np.array([grad_p[0], grad_p[1], d_theta])
    motion = 0.0
    if not obs.is_static:
        ahead, behind = obs.at_time(time_step), obs.at_time(-time_step)
        motion = (_h_aug(ahead, x, w) - _h_aug(behind, x, w)) / (2 * time_step)
    return BoundaryEval(float(h), grad, float(motion))
