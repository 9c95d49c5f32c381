"""Map-vs-truth agreement and the per-run report."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from ..core import Pose2D
from ..mapping import OccupancyGrid
from ..sensing import WorldModel2D

_NEIGHBOURS_4 = ndimage.generate_binary_structure(2, 1)
_NEIGHBOURS_8 = np.ones((3, 3), dtype=bool)


def reachable_free(world: WorldModel2D, start: Pose2D) -> np.ndarray:
    """Free cells connected to the start cell."""
    labels, _ = ndimage.label(~world.occupied, structure=_NEIGHBOURS_4)
    lab = labels[world.cell_of(start.x, start.y)]
    if lab == 0:
        return np.zeros(world.shape, dtype=bool)
    return labels == lab


def surface_cells(world: WorldModel2D, start: Pose2D) -> np.ndarray:
    """Occupied cells that border free space the robot can reach."""
    near = ndimage.binary_dilation(reachable_free(world, start), structure=_NEIGHBOURS_4)
    return world.occupied & near


def _rasterize(grid: OccupancyGrid, world: WorldModel2D, occupied_from: float) -> tuple[np.ndarray, int]:
    """Occupied cells of ``grid`` on the world's lattice, plus how many fell outside it."""
    out = np.zeros(world.shape, dtype=bool)
    rows, cols = np.nonzero(grid.probabilities() >= occupied_from)
    x = grid.origin[0] + cols * grid.resolution
    y = grid.origin[1] + rows * grid.resolution
    c = np.floor(x / world.resolution).astype(int)
    r = np.floor(y / world.resolution).astype(int)
    keep = (r >= 0) & (r < world.shape[0]) & (c >= 0) & (c < world.shape[1])
    out[r[keep], c[keep]] = True
    return out, int((~keep).sum())


@dataclass(frozen=True)
class MapAgreement:
    recall: float
    precision: float
    f1: float
    truth_cells: int
    mapped_cells: int


def map_agreement(grid: OccupancyGrid, world: WorldModel2D, start: Pose2D,
                  occupied_from: float = 0.65) -> MapAgreement:
    """Occupied-cell agreement within one cell (8-neighbourhood).

    Recall counts reachable wall-surface cells of the truth that have a mapped
    occupied cell within one cell; precision counts mapped occupied cells
    within one cell of any truth obstacle. Mapped cells outside the world
    count as false positives.
    """
    truth = surface_cells(world, start)
    mapped, outside = _rasterize(grid, world, occupied_from)
    near_mapped = ndimage.binary_dilation(mapped, structure=_NEIGHBOURS_8)
    near_truth = ndimage.binary_dilation(world.occupied, structure=_NEIGHBOURS_8)
    n_truth = int(truth.sum())
    n_mapped = int(mapped.sum()) + outside
    recall = float((truth & near_mapped).sum() / n_truth) if n_truth else 1.0
    precision = float((mapped & near_truth).sum() / n_mapped) if n_mapped else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MapAgreement(recall, precision, f1, n_truth, n_mapped)


@dataclass
class MetricsReport:
    status: str  # completed | timeout | collision
    ticks: int
    final_true: tuple[float, float, float]
    final_odometry: tuple[float, float, float]
    final_estimate: tuple[float, float, float]
    odometry_error: float
    estimate_error: float
    plans: int
    states: list[str] = field(default_factory=list)
    map: MapAgreement | None = None
    collision_cell: tuple[int, int] | None = None
    plan_times: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "completed"

    def timing_summary(self) -> dict:
        t = self.plan_times
        if not t:
            return {"plans": 0, "best_ms": None, "average_ms": None, "worst_ms": None}
        return {"plans": len(t), "best_ms": 1e3 * min(t), "average_ms": 1e3 * sum(t) / len(t),
                "worst_ms": 1e3 * max(t)}

    def to_dict(self) -> dict:
        """Everything except wall-clock timings, which vary between runs."""
        d = asdict(self)
        d.pop("plan_times")
        return d

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def euclidean_error(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])
