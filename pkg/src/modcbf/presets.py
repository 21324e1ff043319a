"""Named benchmark scenarios and the controller line-ups run on them."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigInvalid
from .geometry import Circle, Funnel, Obstacle, OpenRing
from .models import InputLimits, ModelKind, RobotModel
from .simulation import Scenario, Thresholds

# Two starts placed on the obstacle's symmetry axis exercise the collinear equilibrium.
DESK_STARTS = [np.array([4.0, 8.0]), np.array([7.0, 5.0]), np.array([6.0, 6.0]), np.array([8.0, 8.0])] + [
    9.0 * np.array([math.cos(a), math.sin(a)]) for a in np.deg2rad([10.0, 20.0, 28.0, 53.0, 73.0, 83.0])
]

# Saddle funnel: squircle centred on the x axis so the target ray is a symmetry axis.
FUNNEL_STARTS = [[8, 0], [8, 2], [8, -2], [7, 4], [7, -4], [6, 1], [4, 5], [9, -1], [5, -4], [2, 4]]

# the robot starts inside the cup and must drive out of it; forward driving only
UNICYCLE_START = (3.0, 3.0)
UNICYCLE_LIMITS = InputLimits(lower=np.array([0.0, -5.0]), upper=np.array([2.0, 5.0]))


def convex_obstacle() -> Obstacle:
    return Obstacle(Circle(2.0), position=(3.0, 3.0), name="convex")


def star_obstacle() -> Obstacle:
    # squircle centred at (3, 3)
    return Obstacle(Funnel((2.5, 0.0), 2.0), position=(0.5, 3.0), name="star")


def cshape_obstacle() -> Obstacle:
    # mouth faces away from the target, so direct approaches enter the cup
    return Obstacle(OpenRing(2.0, 2.3, 0.9, math.pi / 4), position=(3.0, 3.0), name="cshape")


DESK_SHAPES = {"convex": convex_obstacle, "star": star_obstacle, "cshape": cshape_obstacle}

# on-manifold settings per shape: the C-shape needs a band covering its cup and a horizon
# longer than half its perimeter so the rollout that leaves the cup wins
ONM_SETTINGS = {
    "convex": {"activation_band": 1.0, "geodesic": {"horizon": 60}},
    "star": {"activation_band": 1.0, "geodesic": {"horizon": 60}},
    "cshape": {"activation_band": 2.5, "geodesic": {"horizon": 220}},
}


def desk_methods(shape: str) -> dict:
    """Controller blocks for the static-table comparison on ``shape``."""
    return {
        "CBF-QP a=h": {"type": "cbf", "alpha": {"family": "linear", "gain": 1.0}},
        "CBF-QP a=5h": {"type": "cbf", "alpha": {"family": "linear", "gain": 5.0}},
        "Normal Mod-DS": {"type": "mod_normal"},
        "Reference Mod-DS": {"type": "mod_reference"},
        "onM-MCBF-QP": {"type": "onm_mcbf", **ONM_SETTINGS[shape]},
    }


def desk_scenario(shape: str, controller: dict | None = None) -> Scenario:
    return Scenario(
        f"{shape}5hz",
        RobotModel(),
        [DESK_SHAPES[shape]()],
        controller or {"type": "cbf"},
        DESK_STARTS,
        rate=5.0,
        timeout=60.0,
    )


def circle_saddle(controller: dict | None = None) -> Scenario:
    """Start behind a circle on the target ray (anti-collinear gradient and nominal)."""
    return Scenario(
        "circle-saddle",
        RobotModel(),
        [Obstacle(Circle(2.0), name="circle")],
        controller or {"type": "cbf", "sensing_range": None},
        [[6.0, 0.0]],
        target=[-4.0, 0.0],
        rate=20.0,
        timeout=40.0,
        thresholds=Thresholds(stuck_distance=1e-3),
    )


def funnel_saddle(controller: dict | None = None, speed_cap: float | None = None) -> Scenario:
    """Squircle on the target ray. ``[8, 0]`` is the only start on the reference ray."""
    limits = InputLimits(speed_cap=speed_cap) if speed_cap else None
    return Scenario(
        "funnel-saddle",
        RobotModel(limits=limits),
        [Obstacle(Funnel((0.0, 0.0), 1.5), position=(4.0, 0.0), name="funnel")],
        controller or {"type": "rmcbf", "sensing_range": None},
        FUNNEL_STARTS,
        rate=20.0,
        timeout=40.0,
        nominal_gain=1.0,
        thresholds=Thresholds(stuck_distance=1e-3),
    )


def cshape_gamma(gamma: float) -> Scenario:
    """On-manifold MCBF-QP with exit-row margin ``gamma`` on the C-shape at 20 Hz."""
    cfg = {"type": "onm_mcbf", "gamma": gamma, "activation_band": 2.5, "geodesic": {"horizon": 250}}
    return Scenario(f"cshape20hz-gamma{gamma:g}", RobotModel(), [cshape_obstacle()], cfg, DESK_STARTS, rate=20.0)


UNICYCLE_METHODS = {
    "S-CBF-QP": (ModelKind.SHIFTED_UNICYCLE, {"type": "cbf"}),
    "S-onM-MCBF-QP": (
        ModelKind.SHIFTED_UNICYCLE,
        {"type": "onm_mcbf", "activation_band": 2.5, "geodesic": {"horizon": 250}},
    ),
    "A-onM-MCBF-QP": (
        ModelKind.UNICYCLE,
        {
            "type": "onm_mcbf",
            "barrier_mode": "augmented",
            "activation_band": 2.5,
            "geodesic": {"horizon": 150, "candidates": 8},
        },
    ),
}


def cshape_unicycle(method: str) -> Scenario:
    """One start with ten evenly spaced headings, C-shape, 20 Hz, box-limited ``(v, omega)``."""
    kind, cfg = UNICYCLE_METHODS[method]
    starts = [[UNICYCLE_START[0], UNICYCLE_START[1], th] for th in 2 * np.pi * np.arange(10) / 10]
    return Scenario(
        f"cshape-unicycle-{method}",
        RobotModel(kind, limits=UNICYCLE_LIMITS),
        [cshape_obstacle()],
        cfg,
        starts,
        rate=20.0,
        timeout=60.0,
        omega_limit=float(UNICYCLE_LIMITS.upper[1]),
    )


def hospital_lite(controller: dict | None = None) -> Scenario:
    """Front desk (open ring), a bench and a walking person crossing the corridor."""
    obstacles = [
        Obstacle(OpenRing(1.2, 1.5, 0.9, math.pi / 4), position=(4.0, 4.0), name="desk"),
        Obstacle(Circle(0.6), position=(7.5, 1.5), name="bench"),
        Obstacle(Circle(0.4), position=(1.0, 6.0), velocity=(0.0, -0.35), name="person"),
    ]
    return Scenario(
        "hospital-lite",
        RobotModel(),
        obstacles,
        controller or {"type": "cbf"},
        [[8.0, 7.0], [9.0, 4.0], [6.5, 8.0], [9.0, 1.5]],
        rate=20.0,
        timeout=60.0,
    )


PRESETS = {
    "convex5hz": lambda: desk_scenario("convex"),
    "star5hz": lambda: desk_scenario("star"),
    "cshape5hz": lambda: desk_scenario("cshape"),
    "hospital-lite": hospital_lite,
    "circle-saddle": circle_saddle,
    "funnel-saddle": funnel_saddle,
}


def preset(name: str) -> Scenario:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigInvalid(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
