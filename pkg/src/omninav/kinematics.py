"""Three-wheel omnidrive kinematics, encoder conversion and dead reckoning."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Frame, Pose2D, Velocity2D


class ConfigurationError(ValueError):
    pass


HEADING_SOURCES = ("encoders", "true_heading_plus_noise")


@dataclass(frozen=True)
class RobotGeometry:
    """Wheel diameter and offset in meters, first-wheel direction in radians."""

    wheel_diameter: float = 0.10
    wheel_offset: float = 0.20
    delta: float = math.radians(30.0)
    ppr: int = 500
    _b: np.ndarray = field(init=False, repr=False, compare=False)
    _b_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.wheel_diameter > 0 or not self.wheel_offset > 0:
            raise ConfigurationError("wheel diameter and offset must be positive")
        if int(self.ppr) != self.ppr or self.ppr <= 0:
            raise ConfigurationError("ppr must be a positive integer")
        b = build_b_matrix(self)
        object.__setattr__(self, "_b", b)
        object.__setattr__(self, "_b_inv", np.linalg.inv(b))

    @property
    def b(self) -> np.ndarray:
        return self._b.copy()

    @property
    def b_inv(self) -> np.ndarray:
        return self._b_inv.copy()

    @property
    def meters_per_pulse(self) -> float:
        return math.pi * self.wheel_diameter / self.ppr


@dataclass(frozen=True)
class WheelSpeeds:
    q1: float
    q2: float
    q3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.q1, self.q2, self.q3])


@dataclass(frozen=True)
class EncoderSample:
    xi1: int
    xi2: int
    xi3: int


def build_b_matrix(g: RobotGeometry) -> np.ndarray:
    c, s, L = math.cos(g.delta), math.sin(g.delta), g.wheel_offset
    b = np.array([[c, s, L], [-c, s, L], [0.0, -1.0, L]])
    if abs(np.linalg.det(b)) <= 1e-9:
        raise ConfigurationError("wheel geometry gives a singular kinematics matrix")
    return b


def encoder_to_wheel_speed(g: RobotGeometry, e: EncoderSample) -> WheelSpeeds:
    k = g.meters_per_pulse
    return WheelSpeeds(k * e.xi1, k * e.xi2, k * e.xi3)


def inverse_kinematics(g: RobotGeometry, v: Velocity2D) -> WheelSpeeds:
    v.require(Frame.LOCAL)
    q = g._b @ np.array([v.vx, v.vy, v.omega])
    return WheelSpeeds(float(q[0]), float(q[1]), float(q[2]))


def forward_kinematics(g: RobotGeometry, q: WheelSpeeds) -> Velocity2D:
    v = g._b_inv @ q.as_array()
    return Velocity2D(float(v[0]), float(v[1]), float(v[2]), Frame.LOCAL)


def local_to_global(v: Velocity2D, theta_prev: float) -> Velocity2D:
    """Rotate a body twist into the world frame using the previous heading."""
    v.require(Frame.LOCAL)
    c, s = math.cos(theta_prev), math.sin(theta_prev)
    return Velocity2D(c * v.vx - s * v.vy, s * v.vx + c * v.vy, v.omega, Frame.GLOBAL)


def global_to_local(v: Velocity2D, theta: float) -> Velocity2D:
    v.require(Frame.GLOBAL)
    c, s = math.cos(theta), math.sin(theta)
    return Velocity2D(c * v.vx + s * v.vy, -s * v.vx + c * v.vy, v.omega, Frame.LOCAL)


def integrate_odometry(p: Pose2D, v: Velocity2D) -> Pose2D:
    v.require(Frame.GLOBAL)
    return Pose2D(p.x + v.vx, p.y + v.vy, p.theta + v.omega)


class Odometry:
    """Dead reckoning from encoder samples.

    ``heading_source="true_heading_plus_noise"`` replaces the encoder yaw rate
    with an externally supplied heading increment, the way an IMU heading can
    stand in for it.
    """

    def __init__(self, geometry: RobotGeometry, start: Pose2D = Pose2D(), heading_source: str = "encoders"):
        if heading_source not in HEADING_SOURCES:
            raise ConfigurationError(f"unknown heading source {heading_source!r}")
        self.geometry = geometry
        self.pose = start
        self.heading_source = heading_source

    def update(self, sample: EncoderSample, imu_dtheta: float | None = None) -> Velocity2D:
        """Integrate one tick and return the global twist that was applied."""
        local = forward_kinematics(self.geometry, encoder_to_wheel_speed(self.geometry, sample))
        if self.heading_source == "true_heading_plus_noise":
            if imu_dtheta is None:
                raise ConfigurationError("heading source needs an external heading increment")
            local = Velocity2D(local.vx, local.vy, imu_dtheta, Frame.LOCAL)
        v = local_to_global(local, self.pose.theta)
        self.pose = integrate_odometry(self.pose, v)
        return v
