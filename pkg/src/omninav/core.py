"""Shared value types, angle arithmetic and the seeded random source."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractViolation(ValueError):
    """A caller broke a precondition (wrong frame, empty input, ...)."""


def normalize_angle(a: float) -> float:
    """Wrap ``a`` into [0, 2*pi)."""
    if not math.isfinite(a):
        raise DomainError(f"angle must be finite, got {a!r}")
    r = math.fmod(a, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    if r >= TWO_PI:
        r = 0.0
    return r


def wrap_pi(a: float) -> float:
    """Wrap ``a`` into (-pi, pi]."""
    r = normalize_angle(a)
    if r > math.pi:
        r -= TWO_PI
    return r


def normalize_angles(a: np.ndarray) -> np.ndarray:
    r = np.mod(a, TWO_PI)
    r[r >= TWO_PI] = 0.0
    return r


class Frame(enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


@dataclass(frozen=True)
class Velocity2D:
    """Planar twist expressed as displacement per tick."""

    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0
    frame: Frame = Frame.LOCAL

    def require(self, frame: Frame) -> None:
        if self.frame is not frame:
            raise ContractViolation(f"expected a {frame.value} velocity, got {self.frame.value}")

    def __add__(self, other: "Velocity2D") -> "Velocity2D":
        if other.frame is not self.frame:
            raise ContractViolation("cannot add velocities in different frames")
        return Velocity2D(self.vx + other.vx, self.vy + other.vy, self.omega + other.omega, self.frame)


@dataclass(frozen=True)
class GridIndex:
    col: int
    row: int


class RandomSource:
    """Seeded PCG64 stream.

    PCG64 is a fully specified integer generator, so a given seed yields the
    same draws on every platform, unlike the interpreter's Mersenne Twister
    seeding which is an implementation detail. The stream must have a single
    owner; pass it explicitly to every stochastic call.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def gaussian(self, mean: float, sigma: float) -> float:
        return gaussian(self, mean, sigma)

    def uniform(self, lo: float, hi: float) -> float:
        return uniform(self, lo, hi)

    def spawn(self, n: int = 1) -> list["RandomSource"]:
        """Independent child streams derived deterministically from this one."""
        seeds = self.generator.integers(0, 2**63, size=n)
        return [RandomSource(int(s)) for s in seeds]

    @property
    def state(self) -> dict:
        return self.generator.bit_generator.state


def gaussian(rs: RandomSource, mean: float, sigma: float) -> float:
    if sigma < 0 or not math.isfinite(sigma):
        raise DomainError(f"sigma must be a finite value >= 0, got {sigma!r}")
    if sigma == 0:
        return float(mean)
    return float(rs.generator.normal(mean, sigma))


def uniform(rs: RandomSource, lo: float, hi: float) -> float:
    if lo > hi:
        raise DomainError(f"empty interval [{lo}, {hi})")
    if lo == hi:
        return float(lo)
    v = lo + (hi - lo) * float(rs.generator.random())
    # rounding in lo + span*u can land on hi
    return v if v < hi else float(np.nextafter(hi, lo))


@dataclass
class SimClock:
    dt: float = 0.05
    tick: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")

    def advance(self) -> int:
        self.tick += 1
        return self.tick

    @property
    def time(self) -> float:
        return self.tick * self.dt
