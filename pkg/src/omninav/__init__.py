"""Deterministic 2-D navigation stack for a three-omniwheel service robot."""
from .core import Frame, Pose2D, RandomSource, Velocity2D

__all__ = ["Frame", "Pose2D", "RandomSource", "Velocity2D"]
__version__ = "0.1.0"
