"""Command-line experiments.

Every subcommand takes all randomness from its seed flags and writes its
results under ``--out``. Wall-clock measurements go to files named
``timing*.csv``; every other output is identical across repeated runs.

Exit codes: 0 success, 1 usage or input error, 2 scenario failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import statistics
import sys
import time
from pathlib import Path as FsPath

import numpy as np

from ..core import RandomSource
from ..mapping import OccupancyGrid
from ..planning import INDEXES, PlannerParams, PlanningError, plan, turning_angle_sum, warm_up
from ..sensing import MapFormatError, ScenarioError, WorldModel2D
from .config import ConfigError, Scenario, find_world
from .scenario import run_scenario, write_timing

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2

CORRIDOR_FROM = (2.5, 5.0)
CORRIDOR_TO = (18.0, 8.5)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _point(text: str) -> tuple[float, float]:
    try:
        x, y = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None
    if not (math.isfinite(x) and math.isfinite(y)):
        raise argparse.ArgumentTypeError("coordinates must be finite")
    return x, y


def _count(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2**64)")
    return v


def _overrides(pairs) -> dict:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise UsageError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _out_dir(path) -> FsPath:
    out = FsPath(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _load_grid(name: str) -> OccupancyGrid:
    return OccupancyGrid.from_world(WorldModel2D.load(find_world(name)))


def _ms_summary(times) -> tuple[float, float, float]:
    return 1e3 * min(times), 1e3 * statistics.fmean(times), 1e3 * max(times)


# -- subcommands ------------------------------------------------------------

def cmd_simulate(a) -> int:
    ov = _overrides(a.set)
    if a.seed is not None:
        ov["seed"] = str(a.seed)
    sc = Scenario.load(a.scenario, ov)
    run = run_scenario(sc, a.out)
    r = run.report
    print(f"status={r.status} ticks={r.ticks} odometry_error={r.odometry_error:.4f} "
          f"estimate_error={r.estimate_error:.4f} plans={r.plans}")
    if r.map is not None:
        print(f"map recall={r.map.recall:.3f} precision={r.map.precision:.3f} f1={r.map.f1:.3f}")
    return EXIT_OK if r.ok else EXIT_FAILURE


def cmd_slam(a) -> int:
    ov = _overrides(a.set)
    ov.update(logodds=a.logodds, localization="slam")
    if a.seed is not None:
        ov["seed"] = str(a.seed)
    sc = Scenario.load(a.scenario, ov)
    run = run_scenario(sc, a.out)
    r = run.report
    out = FsPath(a.out)
    run.estimator.grid.export_pgm(out / f"map_{a.logodds}.pgm")
    m = r.map
    print(f"logodds={a.logodds} status={r.status} recall={m.recall:.3f} precision={m.precision:.3f} "
          f"f1={m.f1:.3f} pose_error={r.estimate_error:.4f}")
    return EXIT_OK if r.ok else EXIT_FAILURE


def cmd_plan(a) -> int:
    grid = _load_grid(a.map)
    params = PlannerParams(max_iterations=a.iterations, sample_margin=a.margin)
    warm_up()
    res = plan(grid, a.from_, a.to, params, RandomSource(a.seed), star=a.algo == "rrt-star", index=a.index)
    out = _out_dir(a.out)
    res.path.to_csv(out / "path.csv")
    res.tree.to_csv(out / "tree.csv")
    write_timing(out / "timing.csv", [res.elapsed])
    print(f"algo={a.algo} complete={res.path.complete} length={res.path.length:.4f} "
          f"turning={turning_angle_sum(res.path.waypoints):.4f} tree={res.tree_size} "
          f"time_ms={1e3 * res.elapsed:.3f}")
    return EXIT_OK


def bench_kdtree(nodes: int, queries: int, seeds: int):
    """Nearest-neighbour queries on both backends; returns (agreement rows, per-backend times)."""
    rows, times = [], {name: [] for name in INDEXES}
    for cls in INDEXES.values():
        cls(capacity=1).insert((0.0, 0.0), 0).nearest((0.0, 0.0))
    for seed in range(seeds):
        rng = RandomSource(seed).generator
        pts = rng.uniform(0.0, 100.0, size=(nodes, 2))
        qs = rng.uniform(0.0, 100.0, size=(queries, 2))
        ids = {}
        for name, cls in INDEXES.items():
            idx = cls(capacity=nodes)
            for i, p in enumerate(pts):
                idx.insert(p, i)
            got = np.empty(queries, dtype=np.int64)
            t0 = time.perf_counter()
            for j, q in enumerate(qs):
                got[j] = idx.nearest(q)[0]
            times[name].append((time.perf_counter() - t0) / queries)
            ids[name] = got
        mismatches = int((ids["kd"] != ids["array"]).sum())
        rows.append((seed, nodes, queries, mismatches, int(ids["kd"].sum())))
    return rows, times


def cmd_bench_kdtree(a) -> int:
    rows, times = bench_kdtree(a.nodes, a.queries, a.seeds)
    out = _out_dir(a.out)
    _write_csv(out / "agreement.csv", ["seed", "nodes", "queries", "mismatches", "kd_id_sum"], rows)
    table = [(name, *(f"{v:.6f}" for v in _ms_summary(t))) for name, t in times.items()]
    _write_csv(out / "timing_kdtree.csv", ["backend", "best_ms", "average_ms", "worst_ms"], table)
    print(f"{'backend':<8}{'best ms':>12}{'average ms':>14}{'worst ms':>12}")
    for name, *vals in table:
        print(f"{name:<8}{vals[0]:>12}{vals[1]:>14}{vals[2]:>12}")
    bad = sum(r[3] for r in rows)
    print(f"nearest-id mismatches between backends: {bad}")
    return EXIT_OK if bad == 0 else EXIT_FAILURE


def compare_planners(grid: OccupancyGrid, start, goal, seeds: int, params: PlannerParams, index: str = "kd"):
    rows, times = [], []
    warm_up()
    for seed in range(seeds):
        for algo in ("rrt", "rrt-star"):
            res = plan(grid, start, goal, params, RandomSource(seed), star=algo == "rrt-star", index=index)
            wp = res.path.waypoints
            rows.append((seed, algo, res.path.complete, res.path.length, turning_angle_sum(wp), res.tree_size,
                         res.iterations))
            times.append((seed, algo, res.elapsed))
    return rows, times


def cmd_compare_planners(a) -> int:
    grid = _load_grid(a.map)
    params = PlannerParams(max_iterations=a.iterations, sample_margin=a.margin)
    rows, times = compare_planners(grid, a.from_, a.to, a.seeds, params, a.index)
    out = _out_dir(a.out)
    _write_csv(out / "comparison.csv", ["seed", "algo", "complete", "length", "turning", "tree_size", "iterations"],
               [[_fmt(v) for v in r] for r in rows])
    _write_csv(out / "timing_planners.csv", ["seed", "algo", "seconds"], [[s, al, repr(t)] for s, al, t in times])
    summary = []
    for algo in ("rrt", "rrt-star"):
        sel = [r for r in rows if r[1] == algo]
        summary.append((algo, len(sel), sum(r[2] for r in sel), statistics.fmean(r[3] for r in sel),
                        statistics.fmean(r[4] for r in sel), statistics.fmean(r[5] for r in sel)))
    _write_csv(out / "summary.csv", ["algo", "runs", "complete", "mean_length", "mean_turning", "mean_tree_size"],
               [[_fmt(v) for v in r] for r in summary])
    print(f"{'algo':<10}{'runs':>6}{'complete':>10}{'length':>10}{'turning':>10}")
    for algo, n, c, ln, tu, _ in summary:
        print(f"{algo:<10}{n:>6}{c:>10}{ln:>10.3f}{tu:>10.3f}")
    return EXIT_OK


def odometry_eval(scenario: str, algo: str, seeds: int, overrides: dict | None = None):
    rows = []
    for seed in range(seeds):
        sc = Scenario.load(scenario, {**(overrides or {}), "planner": algo, "seed": str(seed)})
        r = run_scenario(sc).report
        rows.append((seed, algo, r.status, r.odometry_error, *r.final_true[:2], *r.final_odometry[:2]))
    return rows


def cmd_odometry_eval(a) -> int:
    rows = odometry_eval(a.scenario, a.algo, a.seeds, _overrides(a.set))
    out = _out_dir(a.out)
    _write_csv(out / f"odometry_{a.algo}.csv",
               ["seed", "algo", "status", "odometry_error", "true_x", "true_y", "odom_x", "odom_y"],
               [[_fmt(v) for v in r] for r in rows])
    errs = [r[3] for r in rows if r[2] == "completed"]
    failed = len(rows) - len(errs)
    if errs:
        summary = {"algo": a.algo, "runs": len(rows), "failed": failed, "best_m": min(errs),
                   "average_m": statistics.fmean(errs), "worst_m": max(errs)}
        print(f"{a.algo}: best {100 * min(errs):.3f} cm, average {100 * statistics.fmean(errs):.3f} cm, "
              f"worst {100 * max(errs):.3f} cm over {len(errs)} runs ({failed} failed)")
    else:
        summary = {"algo": a.algo, "runs": len(rows), "failed": failed}
        print(f"{a.algo}: all {failed} runs failed")
    with open(out / f"summary_{a.algo}.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK if failed == 0 else EXIT_FAILURE


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="omninav", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a scenario end to end")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seed", type=_seed)
    s.add_argument("--out", required=True)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("slam", help="map a scenario with one log-odds parameter set")
    s.add_argument("--scenario", required=True)
    s.add_argument("--logodds", choices=("A", "B"), required=True)
    s.add_argument("--seed", type=_seed)
    s.add_argument("--out", required=True)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_slam)

    def planner_flags(s):
        s.add_argument("--iterations", type=_count, default=625)
        s.add_argument("--margin", type=float, default=2.5, help="sampling margin around start and goal (m)")
        s.add_argument("--index", choices=tuple(INDEXES), default="kd")

    s = sub.add_parser("plan", help="plan one path on a map")
    s.add_argument("--map", required=True)
    s.add_argument("--from", dest="from_", type=_point, required=True)
    s.add_argument("--to", type=_point, required=True)
    s.add_argument("--algo", choices=("rrt", "rrt-star"), default="rrt-star")
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--out", default=".")
    planner_flags(s)
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("bench-kdtree", help="nearest-neighbour timing, k-d tree vs linear scan")
    s.add_argument("--nodes", type=_count, required=True)
    s.add_argument("--queries", type=_count, required=True)
    s.add_argument("--seeds", type=_count, default=1)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_bench_kdtree)

    s = sub.add_parser("compare-planners", help="RRT vs RRT* path quality over paired seeds")
    s.add_argument("--map", required=True)
    s.add_argument("--seeds", type=_count, required=True)
    s.add_argument("--from", dest="from_", type=_point, default=CORRIDOR_FROM)
    s.add_argument("--to", type=_point, default=CORRIDOR_TO)
    s.add_argument("--out", default=".")
    planner_flags(s)
    s.set_defaults(func=cmd_compare_planners)

    s = sub.add_parser("odometry-eval", help="final odometry error of escort round trips")
    s.add_argument("--scenario", required=True)
    s.add_argument("--algo", choices=("rrt", "rrt-star"), required=True)
    s.add_argument("--seeds", type=_count, required=True)
    s.add_argument("--out", default=".")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_odometry_eval)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"omninav: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, MapFormatError, PlanningError, ScenarioError, OSError, ValueError) as exc:
        print(f"omninav: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
