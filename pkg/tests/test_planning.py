import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from omninav.core import ContractViolation, RandomSource
from omninav.mapping import OccupancyGrid
from omninav.planning import (KdTree, LinearIndex, Path, PlannerParams, PlanningError, kd_insert, kd_nearest,
                              kd_within_radius, obstacle_free, path_length, plan, plan_rrt, plan_rrt_star,
                              turning_angle_sum)
from omninav.sensing import WorldModel2D
from omninav.sim.cli import _load_grid

coord = st.floats(-100, 100, allow_nan=False)


def brute_nearest(points, q):
    d = [math.dist(p, q) for p in points]
    return int(np.argmin(d))  # first minimum = lowest insertion index


def open_grid(extent=10.0, center=(4.0, 0.0)):
    return OccupancyGrid.empty(center, extent)


def square_map():
    """Known free 10 m x 10 m map covering x in [0, 10], y in [-5, 5]."""
    return OccupancyGrid(np.full((100, 100), -10.0), 0.1, (0.05, -4.95))


def wall_grid():
    occ = np.zeros((60, 60), dtype=bool)
    occ[:, 30] = True
    occ[55:, 30] = False  # gap near the top
    return OccupancyGrid.from_world(WorldModel2D(occ, 0.1))


def boxed_goal_grid():
    occ = np.zeros((100, 100), dtype=bool)
    occ[60:81, 60] = occ[60:81, 80] = True
    occ[60, 60:81] = occ[80, 60:81] = True
    return OccupancyGrid.from_world(WorldModel2D(occ, 0.1))


class TestKdTree:
    def test_single(self):
        t = kd_insert(KdTree(), (1.5, -2.0), 7)
        assert len(t) == 1
        assert kd_nearest(t, (100, 100)) == (7, (1.5, -2.0))

    def test_three_points(self):
        t = KdTree()
        for i, p in enumerate([(0, 0), (5, 5), (10, 0)]):
            kd_insert(t, p, i)
        assert kd_nearest(t, (6, 4)) == (1, (5.0, 5.0))

    def test_query_on_point(self):
        t = KdTree()
        for i, p in enumerate([(0, 0), (5, 5), (10, 0)]):
            kd_insert(t, p, i)
        i, p = kd_nearest(t, (10, 0))
        assert i == 2 and math.dist(p, (10, 0)) == 0

    def test_duplicate_lower_id(self):
        t = KdTree()
        for i, p in enumerate([(3, 3), (1, 1), (1, 1), (1, 1)]):
            kd_insert(t, p, i)
        assert kd_nearest(t, (1.2, 0.9))[0] == 1

    def test_empty(self):
        with pytest.raises(ContractViolation):
            kd_nearest(KdTree(), (0, 0))
        with pytest.raises(ContractViolation):
            LinearIndex().nearest((0, 0))
        assert kd_within_radius(KdTree(), (0, 0), 1.0) == []

    def test_non_finite(self):
        with pytest.raises(ValueError):
            kd_insert(KdTree(), (math.nan, 0), 0)

    def test_1000_points(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-10, 10, (1000, 2))
        t = KdTree(capacity=4)  # forces several reallocations
        for i, p in enumerate(pts):
            kd_insert(t, p, i)
        for q in rng.uniform(-12, 12, (100, 2)):
            assert kd_nearest(t, q)[0] == brute_nearest(pts, q)

    def test_10k_random_cases(self):
        rng = np.random.default_rng(1)
        cases = 0
        while cases < 10_000:
            n = int(rng.integers(1, 60))
            # coarse coordinates produce plenty of exact ties
            pts = rng.integers(-5, 6, (n, 2)).astype(float)
            t, lin = KdTree(), LinearIndex()
            for i, p in enumerate(pts):
                t.insert(p, i)
                lin.insert(p, i)
            for q in rng.uniform(-6, 6, (20, 2)):
                expected = brute_nearest(pts, q)
                assert t.nearest(q)[0] == expected
                assert lin.nearest(q)[0] == expected
                r = float(rng.uniform(0, 4))
                want = {i for i, p in enumerate(pts) if math.dist(p, q) <= r}
                assert {i for i, _ in t.within_radius(q, r)} == want
                assert {i for i, _ in lin.within_radius(q, r)} == want
                cases += 1

    def test_radius_examples(self):
        t = KdTree()
        pts = [(0, 0), (1, 0), (0, 2), (3, 3)]
        for i, p in enumerate(pts):
            t.insert(p, i)
        assert kd_within_radius(t, (1, 0), 0.0) == [(1, (1.0, 0.0))]
        assert sorted(i for i, _ in kd_within_radius(t, (0, 0), 1e6)) == [0, 1, 2, 3]
        with pytest.raises(ValueError):
            kd_within_radius(t, (0, 0), -1)

    @given(st.lists(st.tuples(coord, coord), min_size=1, max_size=80), st.tuples(coord, coord),
           st.floats(0, 100))
    def test_matches_brute_force(self, pts, q, r):
        t = KdTree()
        for i, p in enumerate(pts):
            t.insert(p, i)
        assert t.nearest(q)[0] == brute_nearest(pts, q)
        assert {i for i, _ in t.within_radius(q, r)} == {i for i, p in enumerate(pts)
                                                          if (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 <= r * r}


class TestObstacleFree:
    def test_point_segment(self):
        assert obstacle_free(wall_grid(), (1.0, 1.0), (1.0, 1.0))

    def test_crosses_wall(self):
        assert not obstacle_free(wall_grid(), (1.0, 1.0), (5.0, 1.0))
        assert obstacle_free(wall_grid(), (1.0, 5.8), (5.0, 5.8))

    def test_unknown_is_free(self):
        assert obstacle_free(OccupancyGrid.empty(), (-3, -3), (4, 2))

    def test_conservative_threshold(self):
        assert not obstacle_free(OccupancyGrid.empty(), (-3, -3), (4, 2), PlannerParams(occupancy_threshold=0.5))


class TestParams:
    @pytest.mark.parametrize("kw", [{"delta_stop": 1.0, "delta_step": 0.5}, {"delta_stop": 0.0},
                                    {"max_iterations": 0}, {"r_near": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            PlannerParams(**kw)


def _check_tree(res, q_init):
    tree = res.tree
    assert tree.xy[0] == q_init and tree.parent[0] == -1 and tree.cost[0] == 0.0
    for i in range(1, len(tree)):
        p = tree.parent[i]
        assert 0 <= p < i  # parents precede children, so the tree is acyclic
        assert tree.cost[i] == pytest.approx(tree.cost[p] + math.dist(tree.xy[i], tree.xy[p]), abs=1e-9)
        assert tree.backtrack(i)[0] == q_init


class TestPlanner:
    P = PlannerParams()

    def test_goal_already_reached(self):
        res = plan_rrt(open_grid(), (0.0, 0.0), (0.1, 0.05), self.P, RandomSource(0))
        assert res.path.waypoints == [(0.0, 0.0)]
        assert res.path.length == 0 and res.path.complete and res.iterations == 0

    def test_open_map_100_seeds(self):
        grid = square_map()
        for seed in range(100):
            res = plan_rrt(grid, (0.0, 0.0), (8.0, 0.0), self.P, RandomSource(seed))
            assert res.path.complete
            assert res.path.length >= 8.0 - self.P.delta_stop
            wp = res.path.waypoints
            assert wp[0] == (0.0, 0.0) and math.dist(wp[-1], (8.0, 0.0)) <= self.P.delta_stop
            # the segment still to go closes the straight-line bound
            assert res.path.length + math.dist(wp[-1], (8.0, 0.0)) >= 8.0 - 1e-12

    def test_unreachable_goal(self):
        params = PlannerParams(max_iterations=300, sample_margin=3.0)
        res = plan_rrt_star(boxed_goal_grid(), (2.0, 2.0), (7.0, 7.0), params, RandomSource(0))
        assert not res.path.complete
        assert res.iterations == params.max_iterations
        assert res.path.waypoints[0] == (2.0, 2.0)

    def test_start_in_obstacle(self):
        with pytest.raises(PlanningError):
            plan_rrt(wall_grid(), (3.05, 1.0), (5.0, 1.0), self.P, RandomSource(0))

    def test_unknown_index(self):
        with pytest.raises(ValueError):
            plan(open_grid(), (0, 0), (1, 1), self.P, RandomSource(0), index="quadtree")

    @pytest.mark.parametrize("seed", range(5))
    def test_star_without_neighbours_equals_rrt(self, seed):
        grid = _load_grid("corridor.map")
        a = plan_rrt(grid, (2.5, 5.0), (9.0, 5.0), self.P, RandomSource(seed))
        b = plan_rrt_star(grid, (2.5, 5.0), (9.0, 5.0), PlannerParams(r_near=0.0), RandomSource(seed))
        assert a.tree.xy == b.tree.xy and a.tree.parent == b.tree.parent
        assert a.path.waypoints == b.path.waypoints

    @pytest.mark.parametrize("index", ["kd", "array"])
    @pytest.mark.parametrize("star", [False, True])
    def test_tree_invariants(self, index, star):
        grid = wall_grid()
        params = PlannerParams(sample_margin=2.0)
        for seed in range(10):
            res = plan(grid, (1.0, 1.0), (5.0, 1.0), params, RandomSource(seed), star=star, index=index)
            _check_tree(res, (1.0, 1.0))
            wp = res.path.waypoints
            assert all(obstacle_free(grid, a, b, params) for a, b in zip(wp, wp[1:]))

    def test_indexes_agree(self):
        grid = _load_grid("corridor.map")
        for seed in range(10):
            a = plan_rrt_star(grid, (2.5, 5.0), (18.0, 8.5), PlannerParams(sample_margin=2.5), RandomSource(seed))
            b = plan_rrt_star(grid, (2.5, 5.0), (18.0, 8.5), PlannerParams(sample_margin=2.5), RandomSource(seed),
                              index="array")
            assert a.tree.xy == b.tree.xy and a.path.waypoints == b.path.waypoints

    @given(st.floats(0.5, 5.5), st.floats(0.5, 5.5), st.floats(0.5, 5.5), st.floats(0.5, 5.5),
           st.floats(0.0, 2.0), st.integers(0, 10_000), st.booleans())
    def test_nodes_stay_near_sample_box(self, x0, y0, x1, y1, margin, seed, star):
        # every new node lies on a step of at most delta_step from a node toward a sample in the box
        grid = OccupancyGrid.from_world(WorldModel2D(np.zeros((60, 60), dtype=bool), 0.1))
        params = PlannerParams(max_iterations=100, sample_margin=margin)
        res = plan(grid, (x0, y0), (x1, y1), params, RandomSource(seed), star=star)
        xy = np.array(res.tree.xy)
        slack = params.delta_step + 1e-9
        assert np.all(xy[:, 0] >= min(x0, x1) - margin - slack) and np.all(xy[:, 0] <= max(x0, x1) + margin + slack)
        assert np.all(xy[:, 1] >= min(y0, y1) - margin - slack) and np.all(xy[:, 1] <= max(y0, y1) + margin + slack)
        _check_tree(res, (x0, y0))

    def test_star_shorter_in_mean(self):
        grid = open_grid(extent=12.0, center=(5.0, 0.0))
        rrt, star = [], []
        for seed in range(100):
            rrt.append(plan_rrt(grid, (0.0, 0.0), (8.0, 0.0), self.P, RandomSource(seed)).path.length)
            star.append(plan_rrt_star(grid, (0.0, 0.0), (8.0, 0.0), self.P, RandomSource(seed)).path.length)
        assert np.mean(star) <= np.mean(rrt)

    def test_deterministic(self):
        grid = _load_grid("corridor.map")
        a = plan_rrt_star(grid, (2.5, 5.0), (18.0, 8.5), self.P, RandomSource(3))
        b = plan_rrt_star(grid, (2.5, 5.0), (18.0, 8.5), self.P, RandomSource(3))
        assert a.tree == b.tree and a.path == b.path


class TestPathHelpers:
    def test_length(self):
        assert path_length([(0, 0), (3, 4), (3, 5)]) == 6.0
        assert Path([(0, 0)]).length == 0.0

    def test_turning(self):
        assert turning_angle_sum([(0, 0), (1, 0), (1, 1), (0, 1)]) == pytest.approx(math.pi)
        assert turning_angle_sum([(0, 0), (1, 0), (2, 0)]) == 0.0

    def test_csv(self, tmp_path):
        res = plan_rrt(open_grid(), (0.0, 0.0), (2.0, 0.0), PlannerParams(), RandomSource(0))
        res.tree.to_csv(tmp_path / "t.csv")
        res.path.to_csv(tmp_path / "p.csv")
        tree_lines = (tmp_path / "t.csv").read_text().splitlines()
        assert tree_lines[0] == "id,x,y,parent,cost" and len(tree_lines) == len(res.tree) + 1
        assert (tmp_path / "p.csv").read_text().splitlines()[0] == "index,x,y"
