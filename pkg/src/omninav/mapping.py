"""Log-odds occupancy grid: scan integration, queries and export."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import DomainError, Pose2D
from .sensing import LidarScan, WorldModel2D, write_pgm

PGM_FREE, PGM_UNKNOWN, PGM_OCCUPIED = 255, 128, 0


def prob_to_log_odds(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")
    return math.log(p / (1.0 - p))


def log_odds_to_prob(l):
    """Logistic function; works on scalars and arrays."""
    if np.ndim(l) == 0:
        l = float(l)
        if l >= 0:
            return 1.0 / (1.0 + math.exp(-l))
        e = math.exp(l)
        return e / (1.0 + e)
    l = np.asarray(l, dtype=float)
    e = np.exp(-np.abs(l))
    return np.where(l >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class LogOddsParams:
    l_occ: float = 0.5
    l_free: float = -0.5
    l_0: float = 0.001

    def __post_init__(self):
        if not self.l_occ > 0 > self.l_free:
            raise DomainError("need l_occ > 0 > l_free")


LOGODDS_SETS = {
    "A": LogOddsParams(0.5, -0.5, 0.001),
    "B": LogOddsParams(0.57536, -1.94591, 0.00492),
}


class OccupancyGrid:
    """Dense log-odds grid.

    ``origin`` is the world position of the centre of cell (row 0, col 0);
    rows grow with +y. The grid grows (doubling toward the needed side) when
    a scan reaches beyond it, so world coordinates of existing cells never
    change.
    """

    def __init__(self, log_odds: np.ndarray, resolution: float = 0.1, origin=(0.0, 0.0),
                 l_min: float = -10.0, l_max: float = 10.0):
        if not resolution > 0:
            raise DomainError("resolution must be positive")
        if not l_min < 0 < l_max:
            raise DomainError("need l_min < 0 < l_max")
        self.log_odds = np.ascontiguousarray(log_odds, dtype=np.float64)
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))
        self.l_min = float(l_min)
        self.l_max = float(l_max)

    @classmethod
    def empty(cls, center=(0.0, 0.0), extent: float = 20.0, resolution: float = 0.1, **kw) -> "OccupancyGrid":
        """Unknown grid of about ``extent`` meters per side around ``center``.

        Cell centres sit at ``(k + 0.5) * resolution`` so they line up with
        :class:`WorldModel2D` cells.
        """
        n = max(2, int(math.ceil(extent / resolution)))
        ox = (math.floor(center[0] / resolution) - n // 2 + 0.5) * resolution
        oy = (math.floor(center[1] / resolution) - n // 2 + 0.5) * resolution
        return cls(np.zeros((n, n)), resolution, (ox, oy), **kw)

    @classmethod
    def from_world(cls, world: WorldModel2D, l_min: float = -10.0, l_max: float = 10.0) -> "OccupancyGrid":
        """Saturated grid reproducing a ground-truth world (a known map)."""
        lo = np.where(world.occupied, l_max, l_min)
        r = world.resolution
        return cls(lo, r, (r / 2.0, r / 2.0), l_min, l_max)

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.log_odds.copy(), self.resolution, self.origin, self.l_min, self.l_max)

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_odds.shape

    def index_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the cell holding a world point; may be out of range."""
        c = int(math.floor((x - self.origin[0]) / self.resolution + 0.5))
        r = int(math.floor((y - self.origin[1]) / self.resolution + 0.5))
        return r, c

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return self.origin[0] + col * self.resolution, self.origin[1] + row * self.resolution

    def in_bounds(self, row: int, col: int) -> bool:
        rows, cols = self.log_odds.shape
        return 0 <= row < rows and 0 <= col < cols

    def bounds(self) -> tuple[float, float, float, float]:
        """World box (xmin, ymin, xmax, ymax) covered by the grid."""
        rows, cols = self.log_odds.shape
        h = self.resolution / 2.0
        return (self.origin[0] - h, self.origin[1] - h,
                self.origin[0] + (cols - 0.5) * self.resolution, self.origin[1] + (rows - 0.5) * self.resolution)

    def probabilities(self) -> np.ndarray:
        return log_odds_to_prob(self.log_odds)

    def ensure_contains(self, xmin: float, ymin: float, xmax: float, ymax: float) -> None:
        """Grow the grid until the world box is covered."""
        r0, c0 = self.index_of(xmin, ymin)
        r1, c1 = self.index_of(xmax, ymax)
        rows, cols = self.log_odds.shape
        pad_l = pad_r = pad_b = pad_t = 0
        while c0 + pad_l < 0:
            pad_l += cols + pad_l + pad_r
        while c1 + pad_l >= cols + pad_l + pad_r:
            pad_r += cols + pad_l + pad_r
        while r0 + pad_b < 0:
            pad_b += rows + pad_b + pad_t
        while r1 + pad_b >= rows + pad_b + pad_t:
            pad_t += rows + pad_b + pad_t
        if pad_l or pad_r or pad_b or pad_t:
            self.log_odds = np.pad(self.log_odds, ((pad_b, pad_t), (pad_l, pad_r)))
            self.origin = (self.origin[0] - pad_l * self.resolution, self.origin[1] - pad_b * self.resolution)

    def export_pgm(self, path, free_below: float = 0.35, occupied_from: float = 0.65) -> None:
        write_pgm(path, self.to_image(free_below, occupied_from), comment=f"resolution={self.resolution:g}")

    def to_image(self, free_below: float = 0.35, occupied_from: float = 0.65) -> np.ndarray:
        p = self.probabilities()
        img = np.full(p.shape, PGM_UNKNOWN, dtype=np.uint8)
        img[p < free_below] = PGM_FREE
        img[p >= occupied_from] = PGM_OCCUPIED
        return img[::-1]


def occupancy_at(grid: OccupancyGrid, point) -> float:
    r, c = grid.index_of(point[0], point[1])
    if not grid.in_bounds(r, c):
        return 0.5
    return log_odds_to_prob(grid.log_odds[r, c])


def hit_obstacle(grid: OccupancyGrid, point, threshold: float = 0.65) -> bool:
    return occupancy_at(grid, point) >= threshold


@numba.njit(cache=True)
def _integrate(lo, ox, oy, res, px, py, angles, ranges, l_max, occ_upd, free_upd, lmin, lmax, free_on_max):
    rows, cols = lo.shape
    for i in range(ranges.size):
        l = ranges[i]
        is_max = l >= l_max
        if is_max and not free_on_max:
            continue
        ca = math.cos(angles[i])
        sa = math.sin(angles[i])
        er = int(math.floor((py + l * sa - oy) / res + 0.5))
        ec = int(math.floor((px + l * ca - ox) / res + 0.5))
        if not is_max:
            v = lo[er, ec] + occ_upd
            lo[er, ec] = min(max(v, lmin), lmax)
        pr = -1
        pc = -1
        k = 0
        while k * res < l - res:
            d = max(k * res - res / 2.0, 0.0)
            r = int(math.floor((py + d * sa - oy) / res + 0.5))
            c = int(math.floor((px + d * ca - ox) / res + 0.5))
            k += 1
            # one update per traversed cell; the endpoint keeps its hit
            if (r == pr and c == pc) or (r == er and c == ec and not is_max):
                continue
            pr = r
            pc = c
            v = lo[r, c] + free_upd
            lo[r, c] = min(max(v, lmin), lmax)


def integrate_scan(grid: OccupancyGrid, scan: LidarScan, pose: Pose2D, params: LogOddsParams,
                   free_on_max_range: bool = False) -> OccupancyGrid:
    """Fold one scan taken at ``pose`` into ``grid`` (in place) and return it."""
    if len(scan) == 0:
        return grid
    used = scan.ranges < scan.l_max
    if free_on_max_range:
        used[:] = True
    if not used.any():
        return grid
    reach = float(scan.ranges[used].max()) + grid.resolution
    grid.ensure_contains(pose.x - reach, pose.y - reach, pose.x + reach, pose.y + reach)
    angles = pose.theta + scan.mount_rotation + scan.angles
    _integrate(grid.log_odds, grid.origin[0], grid.origin[1], grid.resolution, float(pose.x), float(pose.y),
               angles, scan.ranges, float(scan.l_max), params.l_occ - params.l_0, params.l_free - params.l_0,
               grid.l_min, grid.l_max, bool(free_on_max_range))
    return grid
