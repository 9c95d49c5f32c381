"""Escorting / Homing state machine."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

from .core import Pose2D


class State(enum.Enum):
    ESCORTING = "Escorting"
    HOMING = "Homing"


@dataclass(frozen=True)
class GoalRequested:
    pose: Pose2D
    room: str | None = None


class ArrivedAtGoal:
    pass


class ArrivedAtInit:
    pass


ARRIVED_AT_GOAL = ArrivedAtGoal()
ARRIVED_AT_INIT = ArrivedAtInit()


@dataclass(frozen=True)
class MoveTo:
    pose: Pose2D
    label: str


@dataclass(frozen=True)
class Reject:
    reason: str


@dataclass(frozen=True)
class BehaviorState:
    state: State
    init_pos: Pose2D
    goal_pos: Optional[Pose2D] = None
    arrival_tolerance: float = 0.15

    def __post_init__(self):
        if self.state is State.ESCORTING and self.goal_pos is None:
            raise ValueError("Escorting needs a goal")


def fsm_step(b: BehaviorState, event, goal_is_free: Callable[[Pose2D], bool] | None = None):
    """Return ``(next_state, action)``; unlisted (state, event) pairs keep the state and do nothing."""
    if b.state is State.HOMING and isinstance(event, GoalRequested):
        if goal_is_free is not None and not goal_is_free(event.pose):
            return b, Reject(f"goal ({event.pose.x:.2f}, {event.pose.y:.2f}) is inside an obstacle")
        return replace(b, state=State.ESCORTING, goal_pos=event.pose), MoveTo(event.pose, "goal_pos")
    if b.state is State.ESCORTING and isinstance(event, ArrivedAtGoal):
        return replace(b, state=State.HOMING), MoveTo(b.init_pos, "init_pos")
    return b, None


def detect_arrival(b: BehaviorState, pose: Pose2D):
    """Arrival event for the current state, judged on planar distance."""
    if b.state is State.ESCORTING:
        target, event = b.goal_pos, ARRIVED_AT_GOAL
    else:
        target, event = b.init_pos, ARRIVED_AT_INIT
    if math.hypot(pose.x - target.x, pose.y - target.y) <= b.arrival_tolerance:
        return event
    return None
