"""Command-line front end: run scenarios, sample vector fields, run benchmark suites, recompute metrics."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import presets
from .config import controller_block, finite_or_none, load_scenario
from .errors import ConfigInvalid, ModcbfError, UnsupportedModel
from .geometry import boundary_value
from .metrics import MetricsReport, aggregate, compute_metrics
from .simulation import Outcome, Scenario, TrajectoryRecord, build_controller, nominal_input, run_start, with_controller

OUTPUT_ENV = "MODCBF_OUTPUT"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def output_root(explicit: Optional[str]) -> Path:
    return Path(explicit or os.environ.get(OUTPUT_ENV) or "modcbf_out")


def _fmt(v) -> str:
    return repr(float(v))


# trajectory CSV


def trajectory_header(d: int, p: int) -> list[str]:
    return (
        ["t"]
        + [f"x{i}" for i in range(d)]
        + [f"u{i}" for i in range(p)]
        + [f"u_nom{i}" for i in range(p)]
        + ["h_min", "infeasible", "fallback", "step_ms"]
    )


def write_trajectory(path: Path, rec: TrajectoryRecord) -> None:
    d, p = rec.x.shape[1], rec.u.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_header(d, p))
        for k in range(len(rec.t)):
            w.writerow(
                [_fmt(rec.t[k])]
                + [_fmt(v) for v in rec.x[k]]
                + [_fmt(v) for v in rec.u[k]]
                + [_fmt(v) for v in rec.u_nom[k]]
                + [_fmt(rec.h_min[k]), int(rec.infeasible[k]), int(rec.fallback[k]), _fmt(rec.step_ms[k])]
            )


def read_trajectory(path: Path, outcome: str, start=None) -> TrajectoryRecord:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    col = {name: i for i, name in enumerate(header)}
    xs = [col[h] for h in header if h.startswith("x")]
    us = [col[h] for h in header if h.startswith("u") and not h.startswith("u_nom")]
    noms = [col[h] for h in header if h.startswith("u_nom")]
    x = body[:, xs]
    return TrajectoryRecord(
        np.asarray(start if start is not None else x[0], dtype=float),
        body[:, col["t"]],
        x,
        body[:, us],
        body[:, noms],
        body[:, col["h_min"]],
        body[:, col["infeasible"]].astype(bool),
        body[:, col["fallback"]].astype(bool),
        body[:, col["step_ms"]],
        Outcome(outcome),
    )


# running


def _run_one(job):
    scenario, index, timing = job
    return run_start(scenario, scenario.starts[index], None, False, timing)


def run_all(s: Scenario, workers: int = 1, timing: bool = True) -> list[TrajectoryRecord]:
    """One record per start; starts fan out over ``workers`` processes."""
    jobs = [(s, i, timing) for i in range(len(s.starts))]
    if workers <= 1 or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def nominal_runs(s: Scenario, workers: int = 1) -> list[TrajectoryRecord]:
    return run_all(with_controller(s, {"type": "nominal"}, obstacles=[]), workers, timing=False)


def report_dict(rep: MetricsReport) -> dict:
    d = {k: (finite_or_none(v) if isinstance(v, float) else v) for k, v in rep.to_dict().items()}
    d["start"] = list(rep.start)
    return d


def summarize(records, nominals, target) -> tuple[list[MetricsReport], dict]:
    reports = [compute_metrics(r, None, n, target) for r, n in zip(records, nominals)]
    return reports, aggregate(reports)


def _write_atomically(dest: Path, fill) -> None:
    """Build the directory in a sibling temp dir, then swap it into place."""
    dest.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=dest.parent))
    try:
        fill(tmp)
        if dest.exists():
            shutil.rmtree(dest)
        os.replace(tmp, dest)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)


def save_run(dest: Path, s: Scenario, records, nominals) -> dict:
    reports, agg = summarize(records, nominals, s.target)
    runs = []
    for i, (rec, rep) in enumerate(zip(records, reports)):
        runs.append({"csv": f"traj_{i}.csv", "nominal_csv": f"nominal_{i}.csv", **report_dict(rep)})
    summary = {
        "scenario": s.name,
        "controller": s.controller,
        "rate": s.rate,
        "seed": s.seed,
        "target": [float(v) for v in s.target],
        "runs": runs,
        "aggregate": {k: finite_or_none(v) if isinstance(v, float) else v for k, v in agg.items()},
    }

    def fill(tmp: Path):
        for i, (rec, nom) in enumerate(zip(records, nominals)):
            write_trajectory(tmp / f"traj_{i}.csv", rec)
            write_trajectory(tmp / f"nominal_{i}.csv", nom)
        (tmp / "summary.json").write_text(json.dumps(summary, indent=2))

    _write_atomically(dest, fill)
    return summary


def _scenario_from_args(args) -> Scenario:
    if bool(args.config) == bool(args.preset):
        raise ConfigInvalid("give exactly one of --config or --preset")
    s = load_scenario(args.config) if args.config else presets.preset(args.preset)
    changes = {}
    if args.controller:
        changes["controller"] = controller_block(args.controller)
    if args.seed is not None:
        changes["seed"] = args.seed
    s = with_controller(s, changes.pop("controller", s.controller), **changes)
    build_controller(s.controller, s.model)  # fail fast on bad controller blocks
    return s


def _check_writable(root: Path) -> None:
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigInvalid(f"output directory {root} is not writable: {exc}") from None
    if not os.access(root, os.W_OK):
        raise ConfigInvalid(f"output directory {root} is not writable")


def cmd_run(args) -> int:
    s = _scenario_from_args(args)
    root = output_root(args.out)
    _check_writable(root)
    records = run_all(s, args.workers, timing=not args.no_timing)
    nominals = nominal_runs(s, args.workers)
    name = args.name or f"{s.name}-{s.controller['type']}"
    summary = save_run(root / name, s, records, nominals)
    outcomes = "".join(r["outcome"][0].upper() for r in summary["runs"])
    print(f"{name}: {outcomes}  success {summary['aggregate']['success_pct']:.0f}%  -> {root / name}")
    return EXIT_OK


# vector field


def sample_field(s: Scenario, grid: dict) -> list[tuple]:
    """Rows ``(x, y, u_x, u_y, speed_ratio, inside)`` over a regular grid at ``t = 0``."""
    if not s.model.fully_actuated:
        raise UnsupportedModel("vector fields are only defined for the fully actuated model")
    ctrl = build_controller(s.controller, s.model)
    n = int(grid["n"])
    if n < 2:
        raise ConfigInvalid("grid needs n >= 2")
    rows = []
    for y in np.linspace(grid["ymin"], grid["ymax"], n):
        for x in np.linspace(grid["xmin"], grid["xmax"], n):
            p = np.array([x, y])
            if any(boundary_value(o, p) < 0 for o in s.obstacles):
                rows.append((x, y, math.nan, math.nan, math.nan, 1))
                continue
            u_nom = nominal_input(s, p)
            ctrl.reset()
            u = ctrl.step(p, u_nom, s.obstacles, s.target).u
            nom = float(np.linalg.norm(u_nom))
            ratio = float(np.linalg.norm(u)) / nom if nom > 0 else math.nan
            rows.append((x, y, float(u[0]), float(u[1]), ratio, 0))
    return rows


def cmd_field(args) -> int:
    s = _scenario_from_args(args)
    grid = dict(zip(("xmin", "xmax", "ymin", "ymax"), args.bounds), n=args.n)
    rows = sample_field(s, grid)
    root = output_root(args.out)
    _check_writable(root)
    path = root / (args.name or f"field-{s.name}-{s.controller['type']}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "u_x", "u_y", "speed_ratio", "inside"])
        for r in rows:
            w.writerow([_fmt(v) for v in r[:5]] + [r[5]])
    print(f"{len(rows)} grid points -> {path}")
    return EXIT_OK


# benchmark suites


def static_table(workers: int = 1) -> list[dict]:
    """Rows mirroring the static-obstacle table: one per (shape, method)."""
    rows = []
    for shape in presets.DESK_SHAPES:
        base = presets.desk_scenario(shape)
        nominals = nominal_runs(base, workers)
        for method, cfg in presets.desk_methods(shape).items():
            s = with_controller(base, cfg)
            _, agg = summarize(run_all(s, workers), nominals, s.target)
            rows.append({"shape": shape, "method": method, **agg})
    return rows


def mcbf_suite(workers: int = 1) -> list[dict]:
    """Outcome-pattern rows for the saddle, exit-margin, unicycle and hospital scenarios."""
    cases = [
        ("circle-saddle", "CBF-QP", presets.circle_saddle()),
        ("funnel-saddle", "CBF-QP", presets.funnel_saddle({"type": "cbf", "sensing_range": None})),
        ("funnel-saddle", "R-MCBF-QP", presets.funnel_saddle()),
        ("funnel-saddle cap 2", "R-MCBF-QP", presets.funnel_saddle(speed_cap=2.0)),
    ]
    cases += [(f"cshape20hz gamma={g:g}", "onM-MCBF-QP", presets.cshape_gamma(g)) for g in (0.1, 1.0, 10.0)]
    cases += [("cshape-unicycle", m, presets.cshape_unicycle(m)) for m in presets.UNICYCLE_METHODS]
    for method, cfg in (
        ("CBF-QP", {"type": "cbf"}),
        ("R-MCBF-QP", {"type": "rmcbf"}),
        ("onM-MCBF-QP", {"type": "onm_mcbf", "activation_band": 1.5, "geodesic": {"horizon": 150}}),
        ("Normal Mod-DS |u|<=1", {"type": "mod_normal", "constraint": {"speed": 1.0}}),
        ("Reference Mod-DS |u|<=1", {"type": "mod_reference", "constraint": {"speed": 1.0}}),
    ):
        cases.append(("hospital-lite", method, presets.hospital_lite(cfg)))
    rows = []
    for scene, method, s in cases:
        records = run_all(s, workers)
        row = {"scene": scene, "method": method}
        row.update({o.value: sum(r.outcome is o for r in records) for o in Outcome})
        row["runs"] = len(records)
        row["min_clearance"] = float(min(r.h_min.min() for r in records))
        row["runtime_ms"] = float(np.mean(np.concatenate([r.step_ms for r in records])))
        row["infeasible_mean"] = float(np.mean([r.infeasible_count for r in records]))
        rows.append(row)
    return rows


def _cell(v) -> str:
    if isinstance(v, float):
        return "NA" if not math.isfinite(v) else f"{v:.3g}"
    return str(v)


def markdown_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    lines += ["| " + " | ".join(_cell(r.get(c)) for c in columns) + " |" for r in rows]
    return "\n".join(lines) + "\n"


STATIC_COLUMNS = ["shape", "method", "l_ratio", "jerk", "d_obs", "v_near", "eta", "runtime_ms", "success_pct"]
SUITE_COLUMNS = ["scene", "method", "reached", "collided", "stuck", "timeout", "min_clearance", "runtime_ms", "infeasible_mean"]


def cmd_bench(args) -> int:
    root = output_root(args.out)
    _check_writable(root)
    if args.suite == "static_table":
        rows, columns = static_table(args.workers), STATIC_COLUMNS
    else:
        rows, columns = mcbf_suite(args.workers), SUITE_COLUMNS
    table = markdown_table(rows, columns)

    def fill(tmp: Path):
        (tmp / "table.md").write_text(table)
        with open(tmp / "table.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)

    _write_atomically(root / args.suite, fill)
    print(table)
    return EXIT_OK


# metrics recompute


def recompute(run_dir: Path) -> dict:
    """Recompute every run's metrics from the CSVs referenced by ``summary.json``."""
    try:
        summary = json.loads((run_dir / "summary.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read {run_dir / 'summary.json'}: {exc}") from None
    target = summary["target"]
    runs = []
    for entry in summary["runs"]:
        rec = read_trajectory(run_dir / entry["csv"], entry["outcome"], entry["start"])
        nom = read_trajectory(run_dir / entry["nominal_csv"], Outcome.REACHED.value)
        runs.append({"csv": entry["csv"], "nominal_csv": entry["nominal_csv"], **report_dict(compute_metrics(rec, None, nom, target))})
    return {**summary, "runs": runs}


def cmd_metrics(args) -> int:
    run_dir = Path(args.run_dir)
    fresh = recompute(run_dir)
    worst = 0.0
    for old, new in zip(json.loads((run_dir / "summary.json").read_text())["runs"], fresh["runs"]):
        for k, v in old.items():
            if isinstance(v, float) and isinstance(new.get(k), float):
                worst = max(worst, abs(v - new[k]))
    out = run_dir / "metrics_recomputed.json"
    out.write_text(json.dumps(fresh, indent=2))
    print(f"recomputed {len(fresh['runs'])} runs; max difference from summary {worst:.3g} -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modcbf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p):
        p.add_argument("--config", help="scenario JSON file")
        p.add_argument("--preset", help=f"named scenario: {', '.join(sorted(presets.PRESETS))}")
        p.add_argument("--controller", help="controller type name or JSON controller block")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help=f"output root (default ${OUTPUT_ENV} or ./modcbf_out)")
        p.add_argument("--name", help="output name inside the root")

    run = sub.add_parser("run", help="simulate every start of a scenario")
    scenario_args(run)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--no-timing", action="store_true", help="write step_ms as 0 so reruns are byte-identical")
    run.set_defaults(func=cmd_run)

    field = sub.add_parser("field", help="sample the controller's vector field on a grid")
    scenario_args(field)
    field.add_argument("--bounds", type=float, nargs=4, metavar=("XMIN", "XMAX", "YMIN", "YMAX"), default=(-1.0, 9.0, -1.0, 9.0))
    field.add_argument("--n", type=int, default=41)
    field.set_defaults(func=cmd_field)

    bench = sub.add_parser("bench", help="run a benchmark suite and emit a table")
    bench.add_argument("suite", choices=["static_table", "mcbf_suite"])
    bench.add_argument("--out")
    bench.add_argument("--workers", type=int, default=1)
    bench.set_defaults(func=cmd_bench)

    met = sub.add_parser("metrics", help="recompute metrics from a run directory's CSVs")
    met.add_argument("run_dir")
    met.set_defaults(func=cmd_metrics)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedModel as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModcbfError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
