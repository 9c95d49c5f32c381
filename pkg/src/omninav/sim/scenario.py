"""Closed-loop scenario: plant, sensors, estimator, planner, controller and behaviour over the bus.

Each tick runs the pipeline sense -> estimate -> (re)plan -> control -> behave.
Every node talks only through :class:`~omninav.bus.TopicBus` topics and
services; the runner merely triggers the plant and the lidar once per tick.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath

import numpy as np
from scipy import ndimage

from ..behavior import BehaviorState, GoalRequested, MoveTo, Reject, State, detect_arrival, fsm_step
from ..bus import TopicBus
from ..control import FollowerState, PdGains, WorldSnapshot, follow_path, replan_policy
from ..core import Frame, Pose2D, RandomSource, SimClock, Velocity2D
from ..kinematics import EncoderSample, Odometry, RobotGeometry
from ..localization import (ClusterParams, FilterParams, MeasurementParams, MotionNoise, ParticleSet,
                            ResampleParams, mcl_step, slam_step)
from ..mapping import LOGODDS_SETS, OccupancyGrid, prob_to_log_odds
from ..planning import Path, PlannerParams, PlanningError, PlanResult, PlanTree, plan, warm_up
from ..sensing import LidarConfig, LidarScan, ScenarioError, WorldModel2D, simulate_scan
from .config import Scenario
from .metrics import MetricsReport, euclidean_error, map_agreement
from .plant import PlantNoise, PlantState, plant_step, proximity_blocked

_ZERO_LOCAL = Velocity2D(frame=Frame.LOCAL)


# -- messages ---------------------------------------------------------------

@dataclass(frozen=True)
class OdomMessage:
    tick: int
    encoders: EncoderSample
    heading_increment: float
    twist: Velocity2D  # global frame, this tick's displacement
    pose: Pose2D


@dataclass(frozen=True)
class ScanMessage:
    tick: int
    scan: LidarScan


@dataclass(frozen=True)
class PlanRequest:
    start: tuple[float, float]
    goal: tuple[float, float]


# -- parameter assembly -----------------------------------------------------

def geometry_from(s: dict) -> RobotGeometry:
    return RobotGeometry(s["wheel_diameter"], s["wheel_offset"], math.radians(s["delta_deg"]), s["ppr"])


def plant_noise_from(s: dict) -> PlantNoise:
    return PlantNoise(s["slip_x"], s["slip_y"], s["slip_theta"], s["slip_transient"],
                      math.radians(s["heading_sigma_deg"]))


def lidar_from(s: dict) -> LidarConfig:
    return LidarConfig(n_beams=s["lidar_beams"], l_min=s["lidar_l_min"], l_max=s["lidar_l_max"],
                       sigma_range=s["lidar_sigma"], dropout_prob=s["lidar_dropout"],
                       mount_rotation=math.radians(s["lidar_mount_deg"]))


def filter_from(s: dict) -> FilterParams:
    return FilterParams(
        noise=MotionNoise(s["sigma_bar_x"], s["sigma_bar_y"], s["sigma_bar_theta"], s["sigma_x"], s["sigma_y"],
                          s["sigma_theta"]),
        resample=ResampleParams(s["alpha_slow"], s["alpha_fast"], s["omega_inject"], s["drift_gamma"],
                                math.radians(s["theta_eps_deg"]), s["inject_random"]),
        cluster=ClusterParams(s["kmeans_k"], s["kmeans_epochs"]),
        measurement=MeasurementParams(beam_stride=s["beam_stride"], hit_threshold=s["hit_threshold"],
                                      p_hit_floor=s["p_hit_floor"]),
        logodds=LOGODDS_SETS[s["logodds"]],
        free_on_max_range=s["free_on_max_range"],
    )


def planner_from(s: dict) -> PlannerParams:
    return PlannerParams(s["max_iterations"], s["delta_stop"], s["delta_step"], s["r_near"], s["sample_margin"],
                         None, s["occupancy_threshold"])


def gains_from(s: dict) -> PdGains:
    return PdGains(s["kp_xy"], s["kd_xy"], s["kp_theta"], s["kd_theta"], s["v_max"], s["omega_max"])


def inflate(grid: OccupancyGrid, clearance: float, threshold: float, keep_free=()) -> OccupancyGrid:
    """Copy of ``grid`` with obstacles grown by ``clearance``.

    Cells within ``clearance`` of each point in ``keep_free`` are left as they
    were unless they are themselves occupied, so a robot that drifted close to
    a wall can still plan its way out.
    """
    out = grid.copy()
    if clearance <= 0:
        return out
    occ = grid.log_odds >= prob_to_log_odds(threshold)
    rad = int(math.ceil(clearance / grid.resolution))
    yy, xx = np.mgrid[-rad:rad + 1, -rad:rad + 1]
    disk = xx * xx + yy * yy <= (clearance / grid.resolution) ** 2 + 1e-9
    grown = ndimage.binary_dilation(occ, structure=disk) & ~occ
    for x, y in keep_free:
        r, c = grid.index_of(x, y)
        r0, r1 = max(r - rad, 0), min(r + rad + 1, grid.shape[0])
        c0, c1 = max(c - rad, 0), min(c + rad + 1, grid.shape[1])
        if r0 < r1 and c0 < c1:
            grown[r0:r1, c0:c1] &= ~disk[r0 - r + rad:r1 - r + rad, c0 - c + rad:c1 - c + rad]
    out.log_odds[grown] = grid.l_max
    return out


# -- nodes ------------------------------------------------------------------

class PlantNode:
    """Ground truth: applies /cmd_vel, publishes /odom, raises the IR blocked flag."""

    def __init__(self, bus: TopicBus, world: WorldModel2D, start: Pose2D, s: dict, rs: RandomSource):
        self.bus, self.world, self.rs = bus, world, rs
        self.geometry = geometry_from(s)
        self.noise = plant_noise_from(s)
        self.ir_range = s["ir_range"]
        self.state = PlantState(start)
        self.odometry = Odometry(self.geometry, start, s["heading_source"])
        self.command = _ZERO_LOCAL
        self.collision = None
        self._was_blocked = False
        bus.subscribe("/cmd_vel", self._on_cmd)

    def _on_cmd(self, cmd: Velocity2D) -> None:
        self.command = cmd

    def step(self, tick: int) -> None:
        out = plant_step(self.state, self.command, self.world, self.noise, self.rs, self.geometry)
        self.state = out.state
        if out.collision is not None:
            self.collision = out.collision
            return
        twist = self.odometry.update(out.encoders, out.heading_increment)
        self.bus.publish("/odom", OdomMessage(tick, out.encoders, out.heading_increment, twist, self.odometry.pose))
        blocked = proximity_blocked(self.world, self.state.pose, self.command, self.ir_range)
        if blocked and not self._was_blocked:
            self.bus.call("/blocked_path_service", True)
        self._was_blocked = blocked


class LidarNode:
    def __init__(self, bus: TopicBus, world: WorldModel2D, plant: PlantNode, s: dict, rs: RandomSource):
        self.bus, self.world, self.plant, self.rs = bus, world, plant, rs
        self.config = lidar_from(s)

    def step(self, tick: int) -> None:
        self.bus.publish("/scan", ScanMessage(tick, simulate_scan(self.world, self.plant.state.pose, self.config,
                                                                  self.rs)))


class EstimatorNode:
    """Publishes /robot_localization and /mapinfo.

    ``slam`` and ``mcl`` run the particle filter every ``filter_every`` scans
    on the odometry accumulated since the last update and dead-reckon in
    between; ``odometry`` and ``truth`` forward those poses directly.
    """

    def __init__(self, bus: TopicBus, world: WorldModel2D, plant: PlantNode, start: Pose2D, s: dict,
                 rs: RandomSource):
        self.bus, self.plant, self.rs = bus, plant, rs
        self.mode = s["localization"]
        self.every = max(1, s["filter_every"])
        self.params = filter_from(s)
        self.truth = OccupancyGrid.from_world(world)
        self.pose = start
        self._acc = [0.0, 0.0, 0.0]
        self._scans = 0
        self.particles: ParticleSet | None = None
        if self.mode == "slam":
            w, h = world.extent
            self.grid = OccupancyGrid.empty((start.x, start.y), 2 * max(w, h), s["resolution"])
        else:
            self.grid = self.truth
        if self.mode in ("slam", "mcl"):
            self.particles = ParticleSet.at_pose(start, s["particles"])
        bus.subscribe("/odom", self._on_odom)
        bus.subscribe("/scan", self._on_scan)

    def _on_odom(self, msg: OdomMessage) -> None:
        self._acc[0] += msg.twist.vx
        self._acc[1] += msg.twist.vy
        self._acc[2] += msg.twist.omega
        if self.mode == "odometry":
            self.pose = msg.pose
        elif self.mode in ("slam", "mcl"):
            self.pose = Pose2D(self.pose.x + msg.twist.vx, self.pose.y + msg.twist.vy,
                               self.pose.theta + msg.twist.omega)

    def _on_scan(self, msg: ScanMessage) -> None:
        if self.mode == "truth":
            self.pose = self.plant.state.pose
        elif self.mode in ("slam", "mcl") and self._scans % self.every == 0:
            v = Velocity2D(*self._acc, Frame.GLOBAL)
            if self.mode == "slam":
                self.pose, self.grid, self.particles = slam_step(v, msg.scan, self.particles, self.grid,
                                                                 self.params, self.rs)
            else:
                self.pose, self.particles = mcl_step(v, msg.scan, self.particles, self.grid, self.params, self.rs)
            self._acc = [0.0, 0.0, 0.0]
        self._scans += 1
        self.bus.publish("/mapinfo", self.grid)
        self.bus.publish("/robot_localization", self.pose)


class WorldModelNode:
    def __init__(self, bus: TopicBus, clock: SimClock):
        self.bus, self.clock = bus, clock
        self.map: OccupancyGrid | None = None
        bus.subscribe("/mapinfo", self._on_map)
        bus.subscribe("/robot_localization", self._on_pose)

    def _on_map(self, grid: OccupancyGrid) -> None:
        self.map = grid

    def _on_pose(self, pose: Pose2D) -> None:
        self.bus.publish("/robot_worldmodel", WorldSnapshot(pose, self.map, self.clock.tick))


class PlannerNode:
    """Serves /goal_service on the inflated planning map."""

    def __init__(self, bus: TopicBus, truth: OccupancyGrid, s: dict, rs: RandomSource):
        self.rs = rs
        self.params = planner_from(s)
        self.star = s["planner"] == "rrt-star"
        self.index = s["planner_index"]
        self.clearance = s["clearance"]
        self.use_truth = s["planning_map"] == "truth"
        self.truth = truth
        self.map: OccupancyGrid | None = None
        self.last: PlanResult | None = None
        self.times: list[float] = []
        bus.subscribe("/mapinfo", self._on_map)
        bus.advertise("/goal_service", self.serve)

    def _on_map(self, grid: OccupancyGrid) -> None:
        self.map = grid

    def serve(self, req: PlanRequest) -> Path:
        base = self.truth if self.use_truth or self.map is None else self.map
        if base is not self.truth:
            base = base.copy()
            m = self.params.sample_margin + base.resolution
            base.ensure_contains(min(req.start[0], req.goal[0]) - m, min(req.start[1], req.goal[1]) - m,
                                 max(req.start[0], req.goal[0]) + m, max(req.start[1], req.goal[1]) + m)
        grid = inflate(base, self.clearance, self.params.occupancy_threshold, keep_free=(req.start, req.goal))
        try:
            res = plan(grid, req.start, req.goal, self.params, self.rs, star=self.star, index=self.index)
        except PlanningError:
            return Path([], complete=False)
        self.last = res
        self.times.append(res.elapsed)
        wp = list(res.path.waypoints)
        if res.path.complete and wp[-1] != req.goal:
            wp.append(req.goal)
        return Path(wp, res.path.complete)


class ControlNode:
    """Follows the current path; replans periodically or when the IR flag is raised."""

    def __init__(self, bus: TopicBus, s: dict):
        self.bus = bus
        self.period = s["replan_period"]
        self.follower = FollowerState(gains_from(s), s["arrival_tolerance"])
        self.target: Pose2D | None = None
        self.path: Path | None = None
        self.since_plan = 0
        self.blocked = False
        bus.advertise("/goal_service_control", self._on_goal)
        bus.advertise("/blocked_path_service", self._on_blocked)
        bus.subscribe("/robot_worldmodel", self._on_snapshot)

    def _on_goal(self, move: MoveTo | None) -> bool:
        """Accept a new target; ``None`` stops the robot."""
        if move is None:
            self.stop()
        else:
            self.target = move.pose
            self.path = None
        return True

    def _on_blocked(self, flag: bool) -> None:
        self.blocked = bool(flag)

    def stop(self) -> None:
        self.target = None
        self.path = None
        self.bus.publish("/cmd_vel", _ZERO_LOCAL)

    def _on_snapshot(self, snap: WorldSnapshot) -> None:
        if self.target is None:
            return
        if self.path is None or replan_policy(self.since_plan, self.blocked, self.period):
            self.path = self.bus.call("/goal_service", PlanRequest((snap.pose.x, snap.pose.y),
                                                                   (self.target.x, self.target.y)))
            self.bus.publish("/robot_pathplanning", self.path)
            self.follower.reset()
            self.since_plan = 0
            self.blocked = False
        self.since_plan += 1
        res = follow_path(self.path.waypoints, snap.pose, self.follower)
        self.bus.publish("/cmd_vel", res.command)


class BehaviorNode:
    """Runs the Escorting/Homing machine on /robot_worldmodel poses."""

    def __init__(self, bus: TopicBus, init: Pose2D, rooms: dict[str, Pose2D], s: dict, goal_is_free):
        self.bus = bus
        self.rooms = rooms
        self.goal_is_free = goal_is_free
        self.state = BehaviorState(State.HOMING, init, None, s["arrival_tolerance"])
        self.idle = True
        self.desired_room: str | None = None
        self.visited: list[str] = []
        self.rejections: list[str] = []
        bus.advertise("/goal_service_behaviour", self._on_request)
        bus.subscribe("/robot_worldmodel", self._on_snapshot)

    def _record(self) -> None:
        if not self.visited or self.visited[-1] != self.state.state.value:
            self.visited.append(self.state.state.value)

    def _apply(self, event):
        self.state, action = fsm_step(self.state, event, self.goal_is_free)
        self._record()
        if isinstance(action, MoveTo):
            self.idle = False
            self.bus.call("/goal_service_control", action)
        elif isinstance(action, Reject):
            self.rejections.append(action.reason)
        return action

    def _on_request(self, room: str):
        self.desired_room = room
        return self._apply(GoalRequested(self.rooms[room], room))

    def _on_snapshot(self, snap: WorldSnapshot) -> None:
        for _ in range(2):
            if self.idle:
                return
            event = detect_arrival(self.state, snap.pose)
            if event is None:
                return
            if self.state.state is State.HOMING:
                self.idle = True
                self.desired_room = None
                self.bus.call("/goal_service_control", None)
                return
            self._apply(event)


class SnapshotWriter:
    """Per-tick state snapshot lines (position and desired room)."""

    def __init__(self, bus: TopicBus, behavior: BehaviorNode, fh=None):
        self.behavior = behavior
        self.fh = fh
        self.lines = 0
        bus.subscribe("/robot_worldmodel", self._on_snapshot)

    def _on_snapshot(self, snap: WorldSnapshot) -> None:
        self.lines += 1
        if self.fh is not None:
            rec = {"tick": snap.tick, "position": snap.position(), "state": self.behavior.state.state.value,
                   "desired_room": self.behavior.desired_room}
            self.fh.write(json.dumps(rec, sort_keys=True) + "\n")


# -- runner -----------------------------------------------------------------

@dataclass
class ScenarioRun:
    report: MetricsReport
    estimator: EstimatorNode
    planner: PlannerNode
    trajectory: list[tuple] = field(default_factory=list)


TRAJECTORY_HEADER = ["tick", "true_x", "true_y", "true_theta", "odom_x", "odom_y", "odom_theta", "est_x", "est_y",
                     "est_theta", "state"]


def run_scenario(sc: Scenario, out_dir: str | os.PathLike | None = None, seed: int | None = None) -> ScenarioRun:
    """Run to completion (all requests served and back at the start), timeout or collision."""
    s = sc.settings
    world = WorldModel2D.load(sc.world)
    if world.is_occupied(sc.start.x, sc.start.y) or not world.contains(sc.start.x, sc.start.y):
        raise ScenarioError(f"start ({sc.start.x}, {sc.start.y}) is not in free space")
    seed = sc.seed if seed is None else seed
    warm_up()
    rs_plant, rs_lidar, rs_filter, rs_plan = RandomSource(seed).spawn(4)
    out = FsPath(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    bus = TopicBus()
    clock = SimClock(s["dt"])
    plant = PlantNode(bus, world, sc.start, s, rs_plant)
    lidar = LidarNode(bus, world, plant, s, rs_lidar)
    est = EstimatorNode(bus, world, plant, sc.start, s, rs_filter)
    WorldModelNode(bus, clock)
    planner = PlannerNode(bus, est.truth, s, rs_plan)
    behavior = BehaviorNode(bus, sc.start, sc.rooms, s,
                            lambda p: world.contains(p.x, p.y) and not world.is_occupied(p.x, p.y))
    control = ControlNode(bus, s)
    snap_fh = open(out / "snapshots.jsonl", "w") if out is not None else None
    SnapshotWriter(bus, behavior, snap_fh)

    pending = list(sc.requests)
    traj: list[tuple] = []
    status = "timeout"
    try:
        while clock.tick < sc.ticks:
            tick = clock.advance()
            if behavior.idle and pending:
                bus.call("/goal_service_behaviour", pending.pop(0))
            plant.step(tick)
            if plant.collision is not None:
                status = "collision"
                break
            lidar.step(tick)
            traj.append((tick, *plant.state.pose.as_tuple(), *plant.odometry.pose.as_tuple(),
                         *est.pose.as_tuple(), behavior.state.state.value))
            if behavior.idle and not pending:
                status = "completed"
                break
    finally:
        if snap_fh is not None:
            snap_fh.close()

    true_pose, odom_pose = plant.state.pose, plant.odometry.pose
    report = MetricsReport(
        status=status,
        ticks=clock.tick,
        final_true=true_pose.as_tuple(),
        final_odometry=odom_pose.as_tuple(),
        final_estimate=est.pose.as_tuple(),
        odometry_error=euclidean_error(true_pose.as_tuple(), odom_pose.as_tuple()),
        estimate_error=euclidean_error(true_pose.as_tuple(), est.pose.as_tuple()),
        plans=len(planner.times),
        states=list(behavior.visited),
        map=map_agreement(est.grid, world, sc.start) if est.mode == "slam" else None,
        collision_cell=plant.collision.cell if plant.collision is not None else None,
        plan_times=list(planner.times),
    )
    run = ScenarioRun(report, est, planner, traj)
    if out is not None:
        write_artifacts(run, out)
    return run


def write_artifacts(run: ScenarioRun, out: FsPath) -> None:
    run.estimator.grid.export_pgm(out / "map.pgm")
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for row in run.trajectory:
            w.writerow([row[0], *(repr(float(v)) for v in row[1:10]), row[10]])
    if run.estimator.particles is not None:
        run.estimator.particles.to_csv(out / "particles.csv")
    last = run.planner.last
    (last.tree if last is not None else PlanTree()).to_csv(out / "tree.csv")
    (last.path if last is not None else Path([], False)).to_csv(out / "path.csv")
    run.report.write_json(out / "metrics.json")
    write_timing(out / "timing.csv", run.report.plan_times)


def write_timing(path, times) -> None:
    """Wall-clock plan times; the only output that differs between identical runs."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["plan", "seconds"])
        for i, t in enumerate(times):
            w.writerow([i, repr(t)])
