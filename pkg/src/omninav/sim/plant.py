"""Ground-truth omnidrive plant: slip-perturbed motion, encoder synthesis, collisions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import Frame, Pose2D, RandomSource, Velocity2D
from ..kinematics import EncoderSample, RobotGeometry, inverse_kinematics, local_to_global
from ..sensing import WorldModel2D, cast_rays


@dataclass(frozen=True)
class PlantNoise:
    """Per-tick slip spreads.

    ``slip_*`` are standard deviations of multiplicative factors around 1 on
    the executed local twist. ``transient`` adds a skid whose spread is
    proportional to how much each command component changed since the
    previous tick. ``heading_sigma`` is the spread of the external heading
    increment, in radians per tick.
    """

    slip_x: float = 0.0
    slip_y: float = 0.0
    slip_theta: float = 0.0
    transient: float = 0.0
    heading_sigma: float = 0.0

    def __post_init__(self):
        if min(self.slip_x, self.slip_y, self.slip_theta, self.transient, self.heading_sigma) < 0:
            raise ValueError("noise spreads must be >= 0")


@dataclass(frozen=True)
class Collision:
    pose: Pose2D
    cell: tuple[int, int]


@dataclass(frozen=True)
class PlantState:
    pose: Pose2D
    command: Velocity2D = field(default_factory=lambda: Velocity2D(frame=Frame.LOCAL))
    slip: tuple[float, float, float] = (1.0, 1.0, 1.0)
    residue: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class PlantOutput:
    state: PlantState
    encoders: EncoderSample
    heading_increment: float
    collision: Collision | None = None


def _first_occupied(world: WorldModel2D, a: Pose2D, b: Pose2D) -> tuple[int, int] | None:
    n = max(1, int(math.ceil(math.hypot(b.x - a.x, b.y - a.y) / (world.resolution / 4))))
    for i in range(1, n + 1):
        t = i / n
        x, y = a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)
        if world.is_occupied(x, y):
            return world.cell_of(x, y)
    return None


def plant_step(ps: PlantState, cmd: Velocity2D, world: WorldModel2D, noise: PlantNoise, rs: RandomSource,
               geometry: RobotGeometry = RobotGeometry()) -> PlantOutput:
    """Advance the true pose by one tick of ``cmd`` (local frame, m/tick).

    The encoders see the commanded wheel motion, quantized to whole pulses with
    the fractional remainder carried to the next tick; slip only affects the
    true pose. On collision the pose is left where it was.
    """
    cmd.require(Frame.LOCAL)
    g = rs.generator
    dv = (cmd.vx - ps.command.vx, cmd.vy - ps.command.vy, cmd.omega - ps.command.omega)
    spreads = (noise.slip_x, noise.slip_y, noise.slip_theta)
    slip = tuple(1.0 + float(g.normal(0.0, sd)) if sd > 0 else 1.0 for sd in spreads)
    skid = [float(g.normal(0.0, noise.transient * abs(d))) if noise.transient > 0 and d != 0 else 0.0 for d in dv]
    actual = Velocity2D(cmd.vx * slip[0] + skid[0], cmd.vy * slip[1] + skid[1], cmd.omega * slip[2] + skid[2],
                        Frame.LOCAL)
    moved = local_to_global(actual, ps.pose.theta)
    new_pose = Pose2D(ps.pose.x + moved.vx, ps.pose.y + moved.vy, ps.pose.theta + moved.omega)

    q = inverse_kinematics(geometry, cmd).as_array()
    total = q / geometry.meters_per_pulse + np.asarray(ps.residue)
    pulses = np.round(total)
    residue = tuple(float(v) for v in total - pulses)
    enc = EncoderSample(*(int(v) for v in pulses))
    dtheta = actual.omega + (float(g.normal(0.0, noise.heading_sigma)) if noise.heading_sigma > 0 else 0.0)

    hit = _first_occupied(world, ps.pose, new_pose) if (cmd.vx or cmd.vy) else None
    if hit is None and not world.contains(new_pose.x, new_pose.y):
        hit = world.cell_of(new_pose.x, new_pose.y)
    if hit is not None:
        return PlantOutput(PlantState(ps.pose, cmd, slip, residue), enc, dtheta, Collision(new_pose, hit))
    return PlantOutput(PlantState(new_pose, cmd, slip, residue), enc, dtheta)


def proximity_blocked(world: WorldModel2D, pose: Pose2D, cmd: Velocity2D, ir_range: float) -> bool:
    """IR proximity check along the commanded direction of travel."""
    cmd.require(Frame.LOCAL)
    if ir_range <= 0 or (cmd.vx == 0 and cmd.vy == 0):
        return False
    heading = pose.theta + math.atan2(cmd.vy, cmd.vx)
    hit = cast_rays(world, pose.x, pose.y, np.array([heading]), ir_range, world.resolution / 2)
    return bool(hit[0] < ir_range)
