"""JSON scenario files: schema, validation and conversion to ``Scenario``."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .errors import ConfigInvalid
from .geometry import Circle, Funnel, Obstacle, OpenRing
from .models import InputLimits, RobotModel
from .presets import preset
from .simulation import Scenario, Thresholds

_VEC2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 1}

OBSTACLE_SCHEMA = {
    "type": "object",
    "required": ["shape"],
    "properties": {
        "shape": {"enum": ["circle", "funnel", "open_ring"]},
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "offset": _VEC2,
        "size": {"type": "number", "exclusiveMinimum": 0},
        "r_in": {"type": "number", "exclusiveMinimum": 0},
        "r_out": {"type": "number", "exclusiveMinimum": 0},
        "gap_half_angle": {"type": "number"},
        "gap_heading": {"type": "number"},
        "position": _VEC2,
        "orientation": {"type": "number"},
        "velocity": _VEC2,
        "angular_rate": {"type": "number"},
        "rotation_center": _VEC2,
        "reference_point": _VEC2,
        "name": {"type": "string"},
    },
    "additionalProperties": False,
}

CONTROLLER_SCHEMA = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["cbf", "rmcbf", "onm_mcbf", "mod_normal", "mod_reference", "mod_equivalent", "nominal"]},
        "alpha": {
            "type": "object",
            "properties": {"family": {"enum": ["linear", "cubic"]}, "gain": {"type": "number", "exclusiveMinimum": 0}},
            "additionalProperties": False,
        },
        "barrier_mode": {"enum": ["positional", "augmented"]},
        "w": {"type": "number", "minimum": 0},
        "sensing_range": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "gamma": {"type": "number", "exclusiveMinimum": 0},
        "activation_band": {"type": "number", "exclusiveMinimum": 0},
        "geodesic": {
            "type": "object",
            "properties": {
                "beta": {"type": "number", "exclusiveMinimum": 0},
                "horizon": {"type": "integer", "minimum": 1},
                "candidates": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "constraint": {
            "type": ["object", "null"],
            "properties": {"speed": {"type": "number", "exclusiveMinimum": 0}, "lower": _VEC, "upper": _VEC},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "modcbf scenario",
    "type": "object",
    "properties": {
        "preset": {"type": "string"},
        "name": {"type": "string"},
        "model": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["single_integrator", "unicycle", "shifted_unicycle"]},
                "a": {"type": "number", "exclusiveMinimum": 0},
                "w": {"type": "number", "minimum": 0},
                "limits": {
                    "type": "object",
                    "properties": {"speed_cap": {"type": "number", "exclusiveMinimum": 0}, "lower": _VEC, "upper": _VEC},
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "obstacles": {"type": "array", "items": OBSTACLE_SCHEMA},
        "controller": CONTROLLER_SCHEMA,
        "starts": {"type": "array", "items": _VEC, "minItems": 1},
        "target": _VEC2,
        "rate": {"type": "number", "exclusiveMinimum": 0},
        "timeout": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer"},
        "nominal_gain": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "omega_limit": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "thresholds": {
            "type": "object",
            "properties": {
                "reach": {"type": "number", "exclusiveMinimum": 0},
                "collision": {"type": "number", "maximum": 0},
                "stuck_window": {"type": "number", "exclusiveMinimum": 0},
                "stuck_distance": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "anyOf": [{"required": ["preset"]}, {"required": ["obstacles", "starts", "controller"]}],
    "additionalProperties": False,
}


def validate(config: dict) -> None:
    try:
        jsonschema.validate(config, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigInvalid(f"{path}: {exc.message}") from None


def controller_block(spec: str | dict) -> dict:
    """Controller override from a JSON object string, a dict, or a bare type name."""
    if isinstance(spec, dict):
        block = spec
    else:
        text = spec.strip()
        if text.startswith("{"):
            try:
                block = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"controller override is not valid JSON: {exc}") from None
        else:
            block = {"type": text}
    try:
        jsonschema.validate(block, CONTROLLER_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigInvalid(f"controller: {exc.message}") from None
    return block


def obstacle_from_config(c: dict) -> Obstacle:
    kind = c["shape"]
    try:
        if kind == "circle":
            shape = Circle(float(c["radius"]))
        elif kind == "funnel":
            shape = Funnel(tuple(c.get("offset", (2.5, 0.0))), float(c.get("size", 0.1)))
        else:
            shape = OpenRing(float(c["r_in"]), float(c["r_out"]), float(c["gap_half_angle"]), float(c.get("gap_heading", 0.0)))
        return Obstacle(
            shape,
            position=np.asarray(c.get("position", (0.0, 0.0)), dtype=float),
            orientation=float(c.get("orientation", 0.0)),
            velocity=np.asarray(c.get("velocity", (0.0, 0.0)), dtype=float),
            angular_rate=float(c.get("angular_rate", 0.0)),
            rotation_center=c.get("rotation_center"),
            reference_point=c.get("reference_point"),
            name=c.get("name", ""),
        )
    except KeyError as exc:
        raise ConfigInvalid(f"{kind} obstacle is missing {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigInvalid(f"bad {kind} obstacle: {exc}") from None


def model_from_config(c: dict) -> RobotModel:
    try:
        lim = c.get("limits")
        limits = None
        if lim:
            limits = InputLimits(lim.get("speed_cap"), lim.get("lower"), lim.get("upper"))
        return RobotModel(c.get("kind", "single_integrator"), float(c.get("a", 0.3)), float(c.get("w", 0.3)), limits)
    except ValueError as exc:
        raise ConfigInvalid(f"bad model: {exc}") from None


def scenario_from_config(config: dict) -> Scenario:
    """Validated scenario. Keys next to ``preset`` override the preset's fields."""
    validate(config)
    base = preset(config["preset"]) if "preset" in config else None
    fields: dict[str, Any] = {k: getattr(base, k) for k in base.__dataclass_fields__} if base else {}
    if "name" in config or not base:
        fields["name"] = config.get("name", "scenario")
    if "model" in config:
        fields["model"] = model_from_config(config["model"])
    elif not base:
        fields["model"] = RobotModel()
    if "obstacles" in config:
        fields["obstacles"] = [obstacle_from_config(o) for o in config["obstacles"]]
    for key in ("controller", "starts", "target", "rate", "timeout", "seed", "nominal_gain", "omega_limit"):
        if key in config:
            fields[key] = config[key]
    if "thresholds" in config:
        fields["thresholds"] = Thresholds(**config["thresholds"])
    try:
        return Scenario(**fields)
    except (ValueError, TypeError) as exc:
        raise ConfigInvalid(str(exc)) from None


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read scenario file {path}: {exc}") from None
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigInvalid(f"{path} must hold a JSON object")
    return scenario_from_config(config)


def finite_or_none(v: float):
    """JSON-safe float (NaN and infinities become ``null``)."""
    return v if isinstance(v, (int, float)) and math.isfinite(v) else None
