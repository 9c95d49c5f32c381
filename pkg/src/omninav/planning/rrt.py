"""RRT and RRT* (choose-parent) planners over an occupancy grid."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numba
import numpy as np

from ..core import RandomSource
from ..mapping import OccupancyGrid, prob_to_log_odds
from .kdtree import INDEXES, _kd_insert, _kd_nearest, _kd_radius, _linear_nearest, _linear_radius


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerParams:
    max_iterations: int = 625
    delta_stop: float = 0.2
    delta_step: float = 1.0
    r_near: float = 1.5
    sample_margin: float = 1.0
    obstacle_check_step: float | None = None  # None = half a cell
    occupancy_threshold: float = 0.65

    def __post_init__(self):
        if not 0 < self.delta_stop < self.delta_step:
            raise ValueError("need 0 < delta_stop < delta_step")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.r_near >= 0:
            raise ValueError("r_near must be >= 0")


@dataclass
class Path:
    waypoints: list[tuple[float, float]]
    complete: bool = True

    @property
    def length(self) -> float:
        return path_length(self.waypoints)

    def __len__(self) -> int:
        return len(self.waypoints)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "x", "y"])
            for i, (x, y) in enumerate(self.waypoints):
                w.writerow([i, repr(x), repr(y)])


@dataclass
class PlanTree:
    xy: list[tuple[float, float]] = field(default_factory=list)
    parent: list[int] = field(default_factory=list)
    cost: list[float] = field(default_factory=list)

    def add(self, point, parent: int, cost: float) -> int:
        self.xy.append((float(point[0]), float(point[1])))
        self.parent.append(parent)
        self.cost.append(cost)
        return len(self.xy) - 1

    def __len__(self) -> int:
        return len(self.xy)

    def backtrack(self, node: int) -> list[tuple[float, float]]:
        out = []
        seen = 0
        while node >= 0:
            out.append(self.xy[node])
            node = self.parent[node]
            seen += 1
            if seen > len(self.xy):
                raise PlanningError("cycle in plan tree")
        return out[::-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y", "parent", "cost"])
            for i, ((x, y), p, c) in enumerate(zip(self.xy, self.parent, self.cost)):
                w.writerow([i, repr(x), repr(y), p, repr(c)])


@dataclass
class PlanResult:
    path: Path
    tree: PlanTree
    elapsed: float
    iterations: int

    @property
    def tree_size(self) -> int:
        return len(self.tree)


def path_length(waypoints) -> float:
    return sum(math.dist(a, b) for a, b in zip(waypoints, waypoints[1:]))


def turning_angle_sum(waypoints) -> float:
    """Sum of absolute heading changes between consecutive segments."""
    total = 0.0
    for a, b, c in zip(waypoints, waypoints[1:], waypoints[2:]):
        h1 = math.atan2(b[1] - a[1], b[0] - a[0])
        h2 = math.atan2(c[1] - b[1], c[0] - b[0])
        total += abs(math.remainder(h2 - h1, 2 * math.pi))
    return total


class _Blocked:
    """Occupancy lookups against a fixed threshold, shared by one plan call."""

    def __init__(self, grid: OccupancyGrid, threshold: float):
        self.grid = grid
        if threshold <= 0.0:
            self.mask = np.ones(grid.shape, dtype=np.bool_)
        elif threshold >= 1.0:
            self.mask = np.zeros(grid.shape, dtype=np.bool_)
        else:
            self.mask = grid.log_odds >= prob_to_log_odds(threshold)
        self.unknown_blocked = threshold <= 0.5
        self.xmin, self.ymin, self.xmax, self.ymax = grid.bounds()

    def inside(self, x: float, y: float) -> bool:
        return self.xmin <= x < self.xmax and self.ymin <= y < self.ymax

    def point(self, x: float, y: float) -> bool:
        r, c = self.grid.index_of(x, y)
        if not self.grid.in_bounds(r, c):
            return self.unknown_blocked
        return bool(self.mask[r, c])

    def segment_free(self, a, b, step: float) -> bool:
        g = self.grid
        return _segment_free(self.mask, g.origin[0], g.origin[1], g.resolution, float(a[0]), float(a[1]),
                             float(b[0]), float(b[1]), step, self.unknown_blocked)


@numba.njit(cache=True)
def _segment_free(mask, ox, oy, res, ax, ay, bx, by, step, outside_blocked):
    rows, cols = mask.shape
    length = math.hypot(bx - ax, by - ay)
    n = max(1, int(math.ceil(length / step)))
    for i in range(n + 1):
        t = i / n
        x = ax + t * (bx - ax)
        y = ay + t * (by - ay)
        r = int(math.floor((y - oy) / res + 0.5))
        c = int(math.floor((x - ox) / res + 0.5))
        if 0 <= r < rows and 0 <= c < cols:
            if mask[r, c]:
                return False
        elif outside_blocked:
            return False
    return True


def obstacle_free(grid: OccupancyGrid, a, b, params: PlannerParams = PlannerParams()) -> bool:
    step = params.obstacle_check_step or grid.resolution / 2.0
    return _Blocked(grid, params.occupancy_threshold).segment_free(a, b, step)


@numba.njit(cache=True)
def _uniform(g, lo, hi):
    if lo == hi:
        return lo
    v = lo + (hi - lo) * g.random()
    return v if v < hi else np.nextafter(hi, lo)


@numba.njit(cache=True)
def _blocked_at(mask, ox, oy, res, x, y, outside_blocked):
    r = int(math.floor((y - oy) / res + 0.5))
    c = int(math.floor((x - ox) / res + 0.5))
    if 0 <= r < mask.shape[0] and 0 <= c < mask.shape[1]:
        return mask[r, c]
    return outside_blocked


@numba.njit(cache=True)
def _grow(mask, ox, oy, res, outside_blocked, box, q_init, q_goal, sample_box, max_iter, delta_stop, delta_step,
          r_near, step, star, use_kd, g):
    """The planner loop, compiled so that index choice dominates its cost.

    Node ids are insertion order; returns (points, parents, costs, node count, iterations).
    """
    cap = max_iter + 1
    pts = np.empty((cap, 2))
    child = np.full((cap, 2), -1, dtype=np.int64)
    parent = np.empty(cap, dtype=np.int64)
    cost = np.empty(cap)
    buf = np.empty(cap, dtype=np.int64)
    stack = np.empty((cap + 1, 2), dtype=np.int64)
    bound = np.empty(cap + 1)
    xmin, ymin, xmax, ymax = box
    lo_x, hi_x, lo_y, hi_y = sample_box
    gx, gy = q_goal
    if use_kd:
        _kd_insert(pts, child, 0, q_init[0], q_init[1])
    else:
        pts[0, 0] = q_init[0]
        pts[0, 1] = q_init[1]
    parent[0] = -1
    cost[0] = 0.0
    n = 1
    iterations = 0
    for _ in range(max_iter):
        b = _kd_nearest(pts, child, n, gx, gy, stack, bound) if use_kd else _linear_nearest(pts, n, gx, gy)
        if math.hypot(pts[b, 0] - gx, pts[b, 1] - gy) <= delta_stop:
            break
        iterations += 1
        rx = _uniform(g, lo_x, hi_x)
        ry = _uniform(g, lo_y, hi_y)
        if not (xmin <= rx < xmax and ymin <= ry < ymax) or _blocked_at(mask, ox, oy, res, rx, ry, outside_blocked):
            continue
        near = _kd_nearest(pts, child, n, rx, ry, stack, bound) if use_kd else _linear_nearest(pts, n, rx, ry)
        ax, ay = pts[near, 0], pts[near, 1]
        d = math.hypot(rx - ax, ry - ay)
        if d == 0.0:
            continue
        r = _uniform(g, delta_stop, delta_step)
        nx = ax + (rx - ax) / d * r
        ny = ay + (ry - ay) / d * r
        if not (xmin <= nx < xmax and ymin <= ny < ymax):
            continue
        if not _segment_free(mask, ox, oy, res, ax, ay, nx, ny, step, outside_blocked):
            continue
        best = near
        best_cost = cost[near] + math.hypot(nx - ax, ny - ay)
        if star:
            r2 = r_near * r_near
            k = _kd_radius(pts, child, n, nx, ny, r2, buf, stack) if use_kd else _linear_radius(pts, n, nx, ny, r2, buf)
            for qid in np.sort(buf[:k]):
                c = cost[qid] + math.hypot(nx - pts[qid, 0], ny - pts[qid, 1])
                if c < best_cost and _segment_free(mask, ox, oy, res, pts[qid, 0], pts[qid, 1], nx, ny, step,
                                                   outside_blocked):
                    best_cost = c
                    best = qid
        if use_kd:
            _kd_insert(pts, child, n, nx, ny)
        else:
            pts[n, 0] = nx
            pts[n, 1] = ny
        parent[n] = best
        cost[n] = best_cost
        n += 1
    return pts, parent, cost, n, iterations


def plan(grid: OccupancyGrid, q_init, q_goal, params: PlannerParams, rs: RandomSource, star: bool = True,
         index: str = "kd") -> PlanResult:
    """Grow a tree from ``q_init`` until a node is within ``delta_stop`` of the goal.

    With ``star`` the parent of each new node is the cheapest collision-free
    neighbour within ``r_near``. Rejected samples still use up an iteration.
    """
    if index not in INDEXES:
        raise ValueError(f"unknown index {index!r}; expected one of {', '.join(INDEXES)}")
    t0 = time.perf_counter()
    blocked = _Blocked(grid, params.occupancy_threshold)
    step = params.obstacle_check_step or grid.resolution / 2.0
    q_init = (float(q_init[0]), float(q_init[1]))
    q_goal = (float(q_goal[0]), float(q_goal[1]))
    if blocked.point(*q_init):
        raise PlanningError(f"start {q_init} lies inside an obstacle")
    m = params.sample_margin
    sample_box = (min(q_init[0], q_goal[0]) - m, max(q_init[0], q_goal[0]) + m,
                  min(q_init[1], q_goal[1]) - m, max(q_init[1], q_goal[1]) + m)
    box = (blocked.xmin, blocked.ymin, blocked.xmax, blocked.ymax)
    pts, parent, cost, n, iterations = _grow(
        blocked.mask, float(grid.origin[0]), float(grid.origin[1]), float(grid.resolution), blocked.unknown_blocked,
        box, q_init, q_goal, sample_box, int(params.max_iterations), float(params.delta_stop),
        float(params.delta_step), float(params.r_near), float(step), bool(star), index == "kd", rs.generator)
    tree = PlanTree([(float(x), float(y)) for x, y in pts[:n]], [int(v) for v in parent[:n]],
                    [float(v) for v in cost[:n]])
    d = np.hypot(pts[:n, 0] - q_goal[0], pts[:n, 1] - q_goal[1])
    end_id = int(np.argmin(d))  # first of equally near nodes, as the indexes break ties
    complete = bool(d[end_id] <= params.delta_stop)
    path = Path(tree.backtrack(end_id), complete)
    return PlanResult(path, tree, time.perf_counter() - t0, iterations)


def warm_up() -> None:
    """Load the compiled planner loop so that the first timed plan does not pay for it."""
    mask = np.zeros((2, 2), dtype=np.bool_)
    for use_kd in (True, False):
        _grow(mask, 0.0, 0.0, 1.0, False, (-0.5, -0.5, 1.5, 1.5), (0.0, 0.0), (1.0, 1.0), (0.0, 1.0, 0.0, 1.0), 1,
              0.1, 0.5, 1.0, 0.5, True, use_kd, np.random.default_rng(0))


def plan_rrt(grid, q_init, q_goal, params: PlannerParams, rs: RandomSource, index: str = "kd") -> PlanResult:
    return plan(grid, q_init, q_goal, params, rs, star=False, index=index)


def plan_rrt_star(grid, q_init, q_goal, params: PlannerParams, rs: RandomSource, index: str = "kd") -> PlanResult:
    return plan(grid, q_init, q_goal, params, rs, star=True, index=index)
