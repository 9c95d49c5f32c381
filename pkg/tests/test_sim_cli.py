import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from omninav.core import Frame, Pose2D, RandomSource, Velocity2D
from omninav.kinematics import Odometry, RobotGeometry
from omninav.mapping import OccupancyGrid
from omninav.sensing import WorldModel2D
from omninav.sim.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from omninav.sim.config import ConfigError, Scenario, load_config, parse_pose, resolve_config
from omninav.sim.metrics import euclidean_error, map_agreement, surface_cells
from omninav.sim.plant import PlantNoise, PlantState, plant_step, proximity_blocked
from omninav.sim.scenario import TRAJECTORY_HEADER, inflate, run_scenario

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"
OPEN = WorldModel2D(np.zeros((100, 100), dtype=bool), 0.1)
G = RobotGeometry()


def drive(world, start, cmd, ticks, noise=PlantNoise(), seed=0):
    ps = PlantState(start)
    odo = Odometry(G, start)
    rs = RandomSource(seed)
    for _ in range(ticks):
        out = plant_step(ps, cmd, world, noise, rs, G)
        if out.collision is not None:
            return ps, odo, out.collision
        ps = out.state
        odo.update(out.encoders)
    return ps, odo, None


class TestPlant:
    def test_noise_free_line(self):
        start = Pose2D(2.0, 2.0, 0.0)
        ps, odo, hit = drive(OPEN, start, Velocity2D(0.01, 0, 0), 100)
        assert hit is None
        assert ps.pose.as_tuple() == pytest.approx((3.0, 2.0, 0.0), abs=1e-12)
        # whole-pulse quantization with carried residue keeps odometry within a tenth of a cell
        assert euclidean_error(ps.pose.as_tuple(), odo.pose.as_tuple()) < OPEN.resolution / 10

    def test_quantization_no_bias(self):
        # residue carrying: total pulses after n ticks equal round(n * exact)
        start = Pose2D(2.0, 2.0, 0.0)
        ps, odo, _ = drive(OPEN, start, Velocity2D(0.0033, 0.0017, 0.002), 300)
        assert euclidean_error(ps.pose.as_tuple(), odo.pose.as_tuple()) < OPEN.resolution / 10

    def test_slip_drift_grows(self):
        noise = PlantNoise(slip_x=0.1)
        cmd = Velocity2D(0.01, 0, 0)
        short, long_ = [], []
        for seed in range(50):
            for ticks, bucket in ((50, short), (400, long_)):
                ps, odo, _ = drive(OPEN, Pose2D(1.0, 5.0), cmd, ticks, noise, seed)
                bucket.append(euclidean_error(ps.pose.as_tuple(), odo.pose.as_tuple()))
        assert np.mean(short) > 0
        assert np.mean(long_) > np.mean(short)

    def test_collision(self):
        occ = np.zeros((40, 40), dtype=bool)
        occ[:, 25] = True
        world = WorldModel2D(occ, 0.1)
        ps, _, hit = drive(world, Pose2D(2.0, 2.0), Velocity2D(0.02, 0, 0), 100)
        assert hit is not None and hit.cell == (20, 25)
        assert not world.is_occupied(ps.pose.x, ps.pose.y)

    def test_local_frame_required(self):
        from omninav.core import ContractViolation
        with pytest.raises(ContractViolation):
            plant_step(PlantState(Pose2D(1, 1)), Velocity2D(frame=Frame.GLOBAL), OPEN, PlantNoise(), RandomSource(0))

    def test_proximity(self):
        occ = np.zeros((40, 40), dtype=bool)
        occ[:, 25] = True
        world = WorldModel2D(occ, 0.1)
        assert proximity_blocked(world, Pose2D(2.35, 2.0), Velocity2D(0.01, 0, 0), 0.25)
        assert not proximity_blocked(world, Pose2D(2.35, 2.0), Velocity2D(-0.01, 0, 0), 0.25)
        assert not proximity_blocked(world, Pose2D(2.35, 2.0), Velocity2D(0, 0, 0.1), 0.25)


class TestConfig:
    def test_defaults_and_overrides(self):
        s = resolve_config({"particles": "100", "free_on_max_range": "yes"})
        assert s["particles"] == 100 and s["free_on_max_range"] is True and s["dt"] == 0.05

    @pytest.mark.parametrize("raw", [{"bogus": "1"}, {"particles": "many"}, {"planner": "astar"}, {"seed": "-1"},
                                     {"dt": "nan"}, {"inject_random": "maybe"}])
    def test_errors(self, raw):
        with pytest.raises(ConfigError):
            resolve_config(raw)

    def test_pose(self):
        p = parse_pose("start", "1, 2, 90")
        assert (p.x, p.y, p.theta) == pytest.approx((1, 2, math.pi / 2))
        with pytest.raises(ConfigError):
            parse_pose("start", "1")

    def test_undefined_room(self, tmp_path):
        f = tmp_path / "s.cfg"
        f.write_text("world = empty.map\nrequests = kitchen\n")
        with pytest.raises(ConfigError):
            Scenario.load(f)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")


class TestMetrics:
    def test_perfect_map(self):
        world = WorldModel2D.load(ROOT / "src/omninav/sim/worlds/corridor.map")
        m = map_agreement(OccupancyGrid.from_world(world), world, Pose2D(2.5, 5.0))
        assert m.recall == 1.0 and m.precision == 1.0 and m.f1 == 1.0

    def test_empty_map(self):
        world = WorldModel2D.load(ROOT / "src/omninav/sim/worlds/corridor.map")
        m = map_agreement(OccupancyGrid.empty((10, 5), 22.0), world, Pose2D(2.5, 5.0))
        assert m.recall == 0.0 and m.f1 == 0.0

    def test_surface_cells_hand_count(self):
        occ = np.ones((5, 5), dtype=bool)
        occ[1:4, 1:4] = False
        occ[2, 2] = True
        world = WorldModel2D(occ, 1.0)
        # 12 border cells touch the free ring by an edge (the 4 corners only diagonally) plus the pillar
        assert int(surface_cells(world, Pose2D(1.5, 1.5)).sum()) == 13

    def test_inflate(self):
        grid = OccupancyGrid.from_world(WorldModel2D(np.pad(np.ones((1, 1), bool), 10), 0.1))
        out = inflate(grid, 0.3, 0.65)
        occupied = int((out.log_odds >= 0).sum())
        assert occupied == int(sum(1 for dx in range(-3, 4) for dy in range(-3, 4) if dx * dx + dy * dy <= 9))
        kept = inflate(grid, 0.3, 0.65, keep_free=[(1.25, 1.05)])
        assert kept.log_odds[kept.index_of(1.25, 1.05)] < 0


class TestScenario:
    def test_trivial(self, tmp_path):
        run = run_scenario(Scenario.load(SCENARIOS / "trivial.cfg"), tmp_path)
        assert run.report.status == "completed" and run.report.ticks == 1
        assert run.report.odometry_error == 0.0

    def test_artifacts_and_self_consistency(self, tmp_path):
        sc = Scenario.load(SCENARIOS / "corridor_escort.cfg", {"ticks": "150"})
        report = run_scenario(sc, tmp_path).report
        assert report.status == "timeout"
        for name in ("map.pgm", "trajectory.csv", "tree.csv", "path.csv", "metrics.json", "snapshots.jsonl",
                     "timing.csv"):
            assert (tmp_path / name).is_file()
        rows = list(csv.DictReader(open(tmp_path / "trajectory.csv")))
        assert list(rows[0]) == TRAJECTORY_HEADER and len(rows) == report.ticks
        last = rows[-1]
        recomputed = math.hypot(float(last["true_x"]) - float(last["odom_x"]),
                                float(last["true_y"]) - float(last["odom_y"]))
        assert recomputed == report.odometry_error
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert metrics["odometry_error"] == report.odometry_error and "plan_times" not in metrics
        snaps = [json.loads(l) for l in open(tmp_path / "snapshots.jsonl")]
        assert len(snaps) == report.ticks
        for s in snaps:
            assert set(s) == {"tick", "position", "state", "desired_room"}
            assert s["position"]["theta_deg"] == pytest.approx(math.degrees(s["position"]["theta_rad"]), abs=1e-9)
        assert snaps[0]["desired_room"] == "teleconference" and snaps[0]["state"] == "Escorting"

    def test_true_pose_stays_free(self):
        world = WorldModel2D.load(ROOT / "src/omninav/sim/worlds/corridor.map")
        run = run_scenario(Scenario.load(SCENARIOS / "corridor_escort.cfg", {"ticks": "300"}))
        assert not any(world.is_occupied(r[1], r[2]) for r in run.trajectory)

    def test_start_in_wall(self, tmp_path):
        from omninav.sensing import ScenarioError
        with pytest.raises(ScenarioError):
            run_scenario(Scenario.load(SCENARIOS / "trivial.cfg", {"start": "0.05, 0.05"}))


def cli(*args):
    return main([str(a) for a in args])


class TestCli:
    def test_bench_tiny(self, tmp_path):
        assert cli("bench-kdtree", "--nodes", 3, "--queries", 1, "--seeds", 1, "--out", tmp_path) == EXIT_OK
        rows = list(csv.DictReader(open(tmp_path / "agreement.csv")))
        assert rows[0]["mismatches"] == "0"

    def test_plan_lower_bound(self, tmp_path):
        assert cli("plan", "--map", "empty.map", "--from", "2,5", "--to", "8,5", "--seed", 4, "--out",
                   tmp_path) == EXIT_OK
        wp = [(float(r["x"]), float(r["y"])) for r in csv.DictReader(open(tmp_path / "path.csv"))]
        length = sum(math.dist(a, b) for a, b in zip(wp, wp[1:]))
        assert length + math.dist(wp[-1], (8, 5)) >= 6.0 - 1e-12

    def test_compare_planners(self, tmp_path):
        assert cli("compare-planners", "--map", "corridor.map", "--seeds", 3, "--out", tmp_path) == EXIT_OK
        rows = list(csv.DictReader(open(tmp_path / "comparison.csv")))
        assert [r["algo"] for r in rows] == ["rrt", "rrt-star"] * 3

    def test_simulate_exit_codes(self, tmp_path):
        assert cli("simulate", "--scenario", SCENARIOS / "trivial.cfg", "--out", tmp_path / "a") == EXIT_OK
        assert cli("simulate", "--scenario", SCENARIOS / "corridor_escort.cfg", "--set", "ticks=5", "--out",
                   tmp_path / "b") == EXIT_FAILURE

    @pytest.mark.parametrize("args", [
        ["simulate", "--scenario", "missing.cfg", "--out", "x"],
        ["plan", "--map", "empty.map", "--from", "1;2", "--to", "3,4"],
        ["plan", "--map", "nowhere.map", "--from", "1,2", "--to", "3,4"],
        ["bench-kdtree", "--nodes", "0", "--queries", "1"],
        ["frobnicate"],
        [],
    ])
    def test_usage_errors(self, args, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(args) == EXIT_USAGE

    def test_plan_start_in_wall(self, tmp_path):
        assert cli("plan", "--map", "corridor.map", "--from", "0.05,0.05", "--to", "3,4", "--out",
                   tmp_path) == EXIT_USAGE

    def test_module_entry_point(self, tmp_path):
        r = subprocess.run([sys.executable, "-m", "omninav.sim.cli", "bench-kdtree", "--nodes", "5", "--queries",
                            "2", "--out", str(tmp_path)], capture_output=True, text=True)
        assert r.returncode == 0 and "mismatches between backends: 0" in r.stdout

    def test_simulate_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert cli("simulate", "--scenario", SCENARIOS / "corridor_escort.cfg", "--set", "ticks=200", "--out",
                       tmp_path / d) == EXIT_FAILURE
        for f in (tmp_path / "a").iterdir():
            if not f.name.startswith("timing"):
                assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name
