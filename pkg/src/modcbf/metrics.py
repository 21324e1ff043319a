"""Trajectory behaviour metrics and benchmark aggregation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import TooShort
from .geometry import boundary_value
from .simulation import Outcome, TrajectoryRecord

MIN_CLEARANCE = 1e-6
# starts whose jerk and straight-line deviation are reported (they interact most with the obstacles)
PROBE_STARTS = ((4.0, 8.0), (7.0, 5.0))


@dataclass(frozen=True)
class MetricsReport:
    start: tuple
    outcome: str
    l: float
    l_nom: float
    l_ratio: float
    jerk: float
    eta: float
    d_obs: float
    v_near: float
    runtime_mean: float
    infeasible_count: int
    steps: int

    def to_dict(self) -> dict:
        return asdict(self)


def _segment_lengths(p: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.diff(p, axis=0), axis=1)


def path_length(p) -> float:
    return float(np.sum(_segment_lengths(np.asarray(p, dtype=float))))


def _trapezoid(values: np.ndarray, ds: np.ndarray) -> float:
    if np.any(np.isinf(values)):
        return math.inf
    return float(np.sum(0.5 * (values[:-1] + values[1:]) * ds))


def clearances(traj: TrajectoryRecord, obstacles: Optional[Sequence] = None) -> np.ndarray:
    """Distance proxy to the nearest obstacle at each sample (``h_min`` unless obstacles are given)."""
    if obstacles is None:
        return np.asarray(traj.h_min, dtype=float)
    out = np.empty(len(traj.t))
    for k, (t, x) in enumerate(zip(traj.t, traj.x)):
        out[k] = min((boundary_value(o.at_time(t), x[:2]) for o in obstacles), default=math.inf)
    return out


def straight_line_deviation(p: np.ndarray, ds: np.ndarray, start, target) -> float:
    """Mean distance from the line through ``start`` and ``target``, weighted by arc length."""
    start = np.asarray(start, dtype=float)
    axis = np.asarray(target, dtype=float) - start
    norm = float(np.linalg.norm(axis))
    rel = p - start
    if norm == 0:
        dev = np.linalg.norm(rel, axis=1)
    else:
        axis = axis / norm
        dev = np.linalg.norm(rel - np.outer(rel @ axis, axis), axis=1)
    l = float(np.sum(ds))
    return _trapezoid(dev, ds) / l if l > 0 else 0.0


def average_jerk(p: np.ndarray, ds: np.ndarray, dt: float) -> float:
    """Arc-length weighted mean of the third finite difference of position.

    The difference over samples ``k..k+3`` is centred on segment ``k+1``.
    """
    l = float(np.sum(ds))
    if l == 0:
        return 0.0
    j = np.linalg.norm(np.diff(p, n=3, axis=0), axis=1) / dt**3
    return float(np.sum(j * ds[1:-1])) / l


def near_obstacle_velocity(ds: np.ndarray, dt: float, clearance: np.ndarray) -> float:
    """Speed averaged with weights ``1/clearance`` (clearance clamped at ``MIN_CLEARANCE``)."""
    w = 1.0 / np.maximum(clearance, MIN_CLEARANCE)
    seg_w = 0.5 * (w[:-1] + w[1:]) * ds
    total = float(np.sum(seg_w))
    if total == 0:
        return 0.0
    return float(np.sum(seg_w * ds / dt)) / total


def compute_metrics(
    traj: TrajectoryRecord,
    obstacles: Optional[Sequence] = None,
    nominal_traj: Optional[TrajectoryRecord] = None,
    target=(0.0, 0.0),
) -> MetricsReport:
    """Metrics of one run. ``l_nom`` is the nominal run's length, or the straight-line distance."""
    p = np.asarray(traj.positions, dtype=float)
    if p.shape[0] < 4:
        raise TooShort(f"need at least 4 samples, got {p.shape[0]}")
    t = np.asarray(traj.t, dtype=float)
    dt = float(t[1] - t[0])
    ds = _segment_lengths(p)
    l = float(np.sum(ds))
    if nominal_traj is not None:
        l_nom = path_length(nominal_traj.positions)
    else:
        l_nom = float(np.linalg.norm(np.asarray(target, dtype=float) - p[0]))
    clear = clearances(traj, obstacles)
    return MetricsReport(
        start=tuple(float(v) for v in traj.start),
        outcome=Outcome(traj.outcome).value,
        l=l,
        l_nom=l_nom,
        l_ratio=l / l_nom if l_nom > 0 else math.nan,
        jerk=average_jerk(p, ds, dt),
        eta=straight_line_deviation(p, ds, p[0], target),
        d_obs=_trapezoid(clear, ds) / l if l > 0 else float(clear[0]),
        v_near=near_obstacle_velocity(ds, dt, clear),
        runtime_mean=float(np.mean(traj.step_ms)) / 1e3,
        infeasible_count=traj.infeasible_count,
        steps=int(p.shape[0]),
    )


def _mean_std(values) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std()) if a.size > 1 else math.nan


def aggregate(reports: Sequence[MetricsReport], probe_starts=PROBE_STARTS) -> dict:
    """Table row: outcome tallies, success rate, and metric means/stds over reached runs.

    Jerk and straight-line deviation use only reached runs from ``probe_starts``.
    """
    reached = [r for r in reports if r.outcome == Outcome.REACHED.value]
    probes = [r for r in reached if any(np.allclose(r.start[:2], s) for s in probe_starts)]
    row = {o.value: sum(r.outcome == o.value for r in reports) for o in Outcome}
    row["runs"] = len(reports)
    row["success_pct"] = 100.0 * len(reached) / len(reports) if reports else math.nan
    for name, pool in (("l_ratio", reached), ("d_obs", reached), ("v_near", reached), ("jerk", probes), ("eta", probes)):
        row[name], row[name + "_std"] = _mean_std([getattr(r, name) for r in pool])
    row["runtime_ms"] = 1e3 * float(np.mean([r.runtime_mean for r in reports])) if reports else math.nan
    row["infeasible_mean"] = float(np.mean([r.infeasible_count for r in reports])) if reports else math.nan
    return row
