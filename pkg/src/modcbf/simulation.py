"""Closed-loop scenario execution and outcome classification."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .cbf import AlphaFn, BarrierMode, CbfQP, StepResult
from .errors import ConfigInvalid
from .geodesic import GeodesicParams
from .geometry import Obstacle, boundary_value
from .mcbf import OnMMcbfQP, RMcbfQP
from .models import ModelKind, RobotModel, nominal_linear, nominal_unicycle, propagate
from .modulation import CbfEquivalentModDS, ModDS, ModulationSpec


class Outcome(str, Enum):
    REACHED = "reached"
    COLLIDED = "collided"
    STUCK = "stuck"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Thresholds:
    reach: float = 0.1
    collision: float = -1e-3
    stuck_window: float = 2.0
    stuck_distance: float = 0.01


@dataclass
class Scenario:
    name: str
    model: RobotModel
    obstacles: list
    controller: dict
    starts: list
    target: np.ndarray = field(default_factory=lambda: np.zeros(2))
    rate: float = 5.0
    timeout: float = 60.0
    seed: int = 0
    nominal_gain: Optional[float] = None
    omega_limit: Optional[float] = None
    thresholds: Thresholds = Thresholds()

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float).reshape(2)
        self.starts = [np.asarray(s, dtype=float) for s in self.starts]
        if not self.rate > 0 or not self.timeout > 0:
            raise ConfigInvalid("rate and timeout must be positive")
        for s in self.starts:
            if s.shape != (self.model.state_dim,):
                raise ConfigInvalid(f"start {s} does not match a {self.model.state_dim}-dimensional state")
            for obs in self.obstacles:
                if boundary_value(obs, s[:2]) < 0:
                    raise ConfigInvalid(f"start {s} lies inside obstacle {obs.name!r}")

    @property
    def dt(self) -> float:
        return 1.0 / self.rate


@dataclass(eq=False)
class TrajectoryRecord:
    """Per-step samples of one closed-loop run.

    ``step_ms`` holds controller wall time and is excluded from equality.
    """

    start: np.ndarray
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    u_nom: np.ndarray
    h_min: np.ndarray
    infeasible: np.ndarray
    fallback: np.ndarray
    step_ms: np.ndarray
    outcome: Outcome
    extras: list = field(default_factory=list)

    def same_as(self, other: "TrajectoryRecord") -> bool:
        keys = ("start", "t", "x", "u", "u_nom", "h_min", "infeasible", "fallback")
        return self.outcome == other.outcome and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in keys)

    @property
    def positions(self) -> np.ndarray:
        return self.x[:, :2]

    @property
    def infeasible_count(self) -> int:
        return int(np.sum(self.infeasible))


def build_controller(config: dict, model: RobotModel):
    """Controller from a config block (see the scenario schema in ``cli``)."""
    kind = config.get("type")
    alpha_cfg = config.get("alpha", {})
    alpha = AlphaFn(alpha_cfg.get("family", "linear"), float(alpha_cfg.get("gain", 1.0)))
    mode = BarrierMode(config.get("barrier_mode", "positional"), float(config.get("w", model.w)))
    sensing = config.get("sensing_range", 3.0)
    if kind == "cbf":
        return CbfQP(model, alpha, mode, sensing)
    if kind == "rmcbf":
        return RMcbfQP(model, alpha, mode, sensing)
    if kind == "onm_mcbf":
        g = config.get("geodesic", {})
        params = GeodesicParams(float(g.get("beta", 0.05)), int(g.get("horizon", 60)), g.get("candidates"))
        return OnMMcbfQP(
            model,
            alpha,
            float(config.get("gamma", 1.0)),
            mode,
            float(config.get("activation_band", 1.0)),
            params,
            sensing,
        )
    if kind in ("mod_normal", "mod_reference", "mod_equivalent"):
        if not model.fully_actuated:
            raise ConfigInvalid("modulation controllers need a fully actuated model")
        if kind == "mod_equivalent":
            return CbfEquivalentModDS(alpha)
        constraint = config.get("constraint")
        if constraint is not None and "speed" not in constraint and "lower" not in constraint:
            raise ConfigInvalid("constraint needs 'speed' or 'lower'/'upper'")
        return ModDS(ModulationSpec(kind.split("_")[1]), constraint, config.get("sensing_range"))
    if kind == "nominal":
        return NominalController()
    raise ConfigInvalid(f"unknown controller type {kind!r}")


class NominalController:
    name = "nominal"

    def reset(self):
        pass

    def step(self, x, u_nom, obstacles, target=None) -> StepResult:
        return StepResult(np.asarray(u_nom, dtype=float).copy())


def nominal_input(s: Scenario, x: np.ndarray) -> np.ndarray:
    if s.model.kind is ModelKind.SINGLE_INTEGRATOR:
        return nominal_linear(x, s.target, s.nominal_gain).u
    return nominal_unicycle(x, s.target, s.dt, s.omega_limit).u


def classify(positions, h_min, t, target, thresholds: Thresholds = Thresholds(), final: bool = True) -> Optional[Outcome]:
    """Outcome of a history; ``None`` if it is still running and ``final`` is false."""
    positions = np.asarray(positions, dtype=float)
    h_min = np.asarray(h_min, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(h_min < thresholds.collision):
        return Outcome.COLLIDED
    p = positions[-1]
    if math.hypot(p[0] - target[0], p[1] - target[1]) <= thresholds.reach:
        return Outcome.REACHED
    if t[-1] - t[0] >= thresholds.stuck_window - 1e-9:
        j = int(np.searchsorted(t, t[-1] - thresholds.stuck_window - 1e-9))
        if np.linalg.norm(positions[-1] - positions[j]) < thresholds.stuck_distance:
            return Outcome.STUCK
    return Outcome.TIMEOUT if final else None


def run_start(s: Scenario, start: np.ndarray, controller=None, keep_extras: bool = False, timing: bool = True) -> TrajectoryRecord:
    ctrl = controller if controller is not None else build_controller(s.controller, s.model)
    ctrl.reset()
    dt = s.dt
    steps = int(round(s.timeout * s.rate))
    window = int(round(s.thresholds.stuck_window * s.rate))
    x = np.asarray(start, dtype=float).copy()
    ts, xs, us, noms, hs, infs, fbs, ms, extras = [], [], [], [], [], [], [], [], []
    outcome = Outcome.TIMEOUT
    for k in range(steps + 1):
        t = k * dt
        obstacles = [o.at_time(t) for o in s.obstacles]
        h_min = min((boundary_value(o, x[:2]) for o in obstacles), default=math.inf)
        u_nom = nominal_input(s, x)
        tic = time.perf_counter()
        res = ctrl.step(x, u_nom, obstacles, s.target)
        elapsed = (time.perf_counter() - tic) * 1e3 if timing else 0.0
        ts.append(t)
        xs.append(x.copy())
        us.append(np.asarray(res.u, dtype=float))
        noms.append(u_nom)
        hs.append(h_min)
        infs.append(res.infeasible)
        fbs.append(res.fallback)
        ms.append(elapsed)
        if keep_extras:
            extras.append(res.info)
        # O(1) checks against the newest sample only
        lo = max(0, len(xs) - 1 - window)
        o = classify([xs[lo][:2], x[:2]], [h_min], [ts[lo], t], s.target, s.thresholds, final=False)
        if o is not None:
            outcome = o
            break
        x = propagate(s.model, x, res.u, dt)
    return TrajectoryRecord(
        np.asarray(start, dtype=float),
        np.array(ts),
        np.array(xs),
        np.array(us),
        np.array(noms),
        np.array(hs),
        np.array(infs, dtype=bool),
        np.array(fbs, dtype=bool),
        np.array(ms),
        outcome,
        extras,
    )


def run_scenario(s: Scenario, keep_extras: bool = False, timing: bool = True) -> list[TrajectoryRecord]:
    """One record per start, each with a fresh controller."""
    ctrl = build_controller(s.controller, s.model)
    return [run_start(s, start, ctrl, keep_extras, timing) for start in s.starts]


def with_controller(s: Scenario, controller: dict, **changes) -> Scenario:
    """Copy of ``s`` with another controller block (and optional field overrides)."""
    fields = {k: getattr(s, k) for k in s.__dataclass_fields__}
    fields.update(controller=controller, **changes)
    return Scenario(**fields)
