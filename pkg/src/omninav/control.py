"""PD setpoint control, path following and the world-model snapshot."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import Frame, Pose2D, Velocity2D, wrap_pi
from .kinematics import global_to_local
from .mapping import OccupancyGrid


@dataclass(frozen=True)
class PdGains:
    kp_xy: float = 1.2
    kd_xy: float = 0.4
    kp_theta: float = 2.0
    kd_theta: float = 0.3
    v_max: float = 0.05
    omega_max: float = 0.1

    def __post_init__(self):
        if min(self.kp_xy, self.kd_xy, self.kp_theta, self.kd_theta) < 0:
            raise ValueError("gains must be >= 0")
        if not (self.v_max > 0 and self.omega_max > 0):
            raise ValueError("saturation limits must be positive")


@dataclass(frozen=True)
class PoseError:
    """Setpoint minus pose; ``dtheta`` is wrapped into (-pi, pi]."""

    dx: float = 0.0
    dy: float = 0.0
    dtheta: float = 0.0

    @classmethod
    def between(cls, setpoint: Pose2D, pose: Pose2D) -> "PoseError":
        return cls(setpoint.x - pose.x, setpoint.y - pose.y, wrap_pi(setpoint.theta - pose.theta))


def _clip(v: float, limit: float) -> float:
    return max(-limit, min(limit, v))


def pd_raw(e: PoseError, e_prev: PoseError, g: PdGains) -> Velocity2D:
    """The PD law before saturation."""
    return Velocity2D(
        g.kp_xy * e.dx + g.kd_xy * (e.dx - e_prev.dx),
        g.kp_xy * e.dy + g.kd_xy * (e.dy - e_prev.dy),
        g.kp_theta * e.dtheta + g.kd_theta * (e.dtheta - e_prev.dtheta),
        Frame.GLOBAL,
    )


def pd_control(e: PoseError, e_prev: PoseError, g: PdGains) -> Velocity2D:
    u = pd_raw(e, e_prev, g)
    return Velocity2D(_clip(u.vx, g.v_max), _clip(u.vy, g.v_max), _clip(u.omega, g.omega_max), Frame.GLOBAL)


def replan_policy(ticks_since_plan: int, blocked_flag: bool, period: int = 40) -> bool:
    return blocked_flag or ticks_since_plan >= period


@dataclass
class FollowerState:
    gains: PdGains = field(default_factory=PdGains)
    arrival_tolerance: float = 0.15
    index: int = 0
    prev_error: PoseError | None = None
    heading: float | None = None

    def reset(self) -> None:
        self.index = 0
        self.prev_error = None
        self.heading = None


@dataclass(frozen=True)
class FollowResult:
    command: Velocity2D  # local frame, saturated
    raw: Velocity2D  # global frame, before saturation
    index: int
    complete: bool
    replan: bool = False


_STOP = Velocity2D(0.0, 0.0, 0.0, Frame.LOCAL)


def follow_path(waypoints, pose: Pose2D, state: FollowerState) -> FollowResult:
    """Drive toward the first waypoint beyond the arrival tolerance.

    The heading setpoint faces along the current path segment, and the
    planar command is limited in norm so the local-frame components also
    respect ``v_max``.
    """
    if not waypoints:
        return FollowResult(_STOP, Velocity2D(frame=Frame.GLOBAL), 0, False, replan=True)
    last = len(waypoints) - 1
    i = min(state.index, last)
    if math.dist(waypoints[last], (pose.x, pose.y)) <= state.arrival_tolerance:
        i = last
    while i < last and math.dist(waypoints[i], (pose.x, pose.y)) <= state.arrival_tolerance:
        i += 1
    if i != state.index:
        state.prev_error = None
    state.index = i
    target = waypoints[i]
    if i == last and math.dist(target, (pose.x, pose.y)) <= state.arrival_tolerance:
        return FollowResult(_STOP, Velocity2D(frame=Frame.GLOBAL), i, True)

    src = waypoints[i - 1] if i > 0 else (pose.x, pose.y)
    if math.dist(src, target) > 1e-9:
        state.heading = math.atan2(target[1] - src[1], target[0] - src[0])
    heading = state.heading if state.heading is not None else pose.theta
    e = PoseError.between(Pose2D(target[0], target[1], heading), pose)
    e_prev = state.prev_error if state.prev_error is not None else e
    state.prev_error = e
    g = state.gains
    raw = pd_raw(e, e_prev, g)
    u = pd_control(e, e_prev, g)
    norm = math.hypot(u.vx, u.vy)
    if norm > g.v_max:
        u = Velocity2D(u.vx * g.v_max / norm, u.vy * g.v_max / norm, u.omega, Frame.GLOBAL)
    return FollowResult(global_to_local(u, pose.theta), raw, i, False)


@dataclass(frozen=True)
class WorldSnapshot:
    pose: Pose2D
    map: OccupancyGrid | None
    tick: int

    @property
    def theta_deg(self) -> float:
        return math.degrees(self.pose.theta)

    def position(self) -> dict:
        return {"x": self.pose.x, "y": self.pose.y, "theta_rad": self.pose.theta, "theta_deg": self.theta_deg}
