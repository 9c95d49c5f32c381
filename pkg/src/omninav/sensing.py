"""LIDAR geometry, ground-truth worlds and a raycasting scan simulator."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numba
import numpy as np

from .core import DomainError, Pose2D, RandomSource


class ScenarioError(RuntimeError):
    pass


class MapFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LidarConfig:
    n_beams: int = 360
    l_min: float = 0.15
    l_max: float = 12.0
    sigma_range: float = 0.01
    dropout_prob: float = 0.0
    mount_rotation: float = 0.0
    step: float | None = None  # ray-march step; None means half a cell

    def beam_angles(self) -> np.ndarray:
        return np.arange(self.n_beams) * (2.0 * math.pi / self.n_beams)


@dataclass(frozen=True)
class LidarScan:
    ranges: np.ndarray
    angles: np.ndarray
    l_max: float
    l_min: float = 0.0
    mount_rotation: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.ranges, dtype=float)
        a = np.asarray(self.angles, dtype=float)
        if r.shape != a.shape or r.ndim != 1:
            raise ValueError("ranges and angles must be equal-length 1-D arrays")
        if a.size > 1 and np.any(np.diff(a) <= 0):
            raise ValueError("beam angles must be strictly increasing")
        object.__setattr__(self, "ranges", np.clip(r, self.l_min, self.l_max))
        object.__setattr__(self, "angles", a)

    def __len__(self) -> int:
        return self.ranges.size

    def points(self) -> np.ndarray:
        """Beam endpoints in the robot frame, mount rotation applied."""
        xy = np.column_stack(polar_to_point(self.ranges, self.angles))
        return apply_mount_rotation(xy, self.mount_rotation)


def polar_to_point(l, phi):
    if np.any(np.asarray(l) < 0):
        raise DomainError("range must be non-negative")
    return l * np.cos(phi), l * np.sin(phi)


def apply_mount_rotation(pt, phi_mount: float):
    """Rotate a point (or an (n, 2) array of points) by ``phi_mount``."""
    c, s = math.cos(phi_mount), math.sin(phi_mount)
    p = np.asarray(pt, dtype=float)
    x, y = p[..., 0], p[..., 1]
    out = np.stack([c * x - s * y, s * x + c * y], axis=-1)
    if out.ndim == 1:
        return float(out[0]), float(out[1])
    return out


class WorldModel2D:
    """Ground-truth obstacle grid. Cell (row, col) covers
    ``[col*res, (col+1)*res) x [row*res, (row+1)*res)``; row 0 is the bottom."""

    def __init__(self, occupied: np.ndarray, resolution: float):
        if not resolution > 0:
            raise MapFormatError("resolution must be positive")
        self.occupied = np.ascontiguousarray(occupied, dtype=np.bool_)
        self.resolution = float(resolution)

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupied.shape

    @property
    def extent(self) -> tuple[float, float]:
        rows, cols = self.occupied.shape
        return cols * self.resolution, rows * self.resolution

    def contains(self, x: float, y: float) -> bool:
        w, h = self.extent
        return 0.0 <= x < w and 0.0 <= y < h

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution))

    def is_occupied(self, x: float, y: float) -> bool:
        if not self.contains(x, y):
            return False
        r, c = self.cell_of(x, y)
        return bool(self.occupied[r, c])

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (col + 0.5) * self.resolution, (row + 0.5) * self.resolution

    def free_cells(self) -> np.ndarray:
        return np.argwhere(~self.occupied)

    @classmethod
    def load(cls, path: str | os.PathLike, resolution: float | None = None) -> "WorldModel2D":
        with open(path, "rb") as fh:
            head = fh.read(2)
        if head == b"P5":
            return cls.from_pgm(path, resolution)
        with open(path, encoding="ascii") as fh:
            return cls.from_ascii(fh.read())

    @classmethod
    def from_ascii(cls, text: str) -> "WorldModel2D":
        lines = [ln.rstrip("\r") for ln in text.splitlines()]
        if not lines or not lines[0].startswith("resolution="):
            raise MapFormatError("first line must be 'resolution=<meters>'")
        try:
            res = float(lines[0].split("=", 1)[1])
        except ValueError as exc:
            raise MapFormatError(f"bad resolution header: {lines[0]!r}") from exc
        rows = [ln for ln in lines[1:] if ln]
        if not rows:
            raise MapFormatError("map has no rows")
        width = len(rows[0])
        grid = np.zeros((len(rows), width), dtype=np.bool_)
        for i, ln in enumerate(rows):
            if len(ln) != width:
                raise MapFormatError(f"row {i} has width {len(ln)}, expected {width}")
            bad = set(ln) - {"#", "."}
            if bad:
                raise MapFormatError(f"row {i} has unexpected characters {sorted(bad)}")
            grid[i] = [ch == "#" for ch in ln]
        return cls(grid[::-1], res)

    def to_ascii(self) -> str:
        body = "\n".join("".join("#" if v else "." for v in row) for row in self.occupied[::-1])
        return f"resolution={self.resolution:g}\n{body}\n"

    @classmethod
    def from_pgm(cls, path, resolution: float | None = None) -> "WorldModel2D":
        pixels, comments = read_pgm(path)
        for c in comments:
            if c.strip().startswith("resolution="):
                resolution = resolution or float(c.split("=", 1)[1])
        return cls(pixels[::-1] < 128, resolution or 0.1)


def read_pgm(path) -> tuple[np.ndarray, list[str]]:
    """Read a binary (P5) PGM; returns rows top-first and header comments."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens: list[bytes] = []
    comments: list[str] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            end = data.index(b"\n", pos)
            comments.append(data[pos + 1:end].decode("ascii", "replace"))
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise MapFormatError("only binary PGM (P5) is supported")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise MapFormatError("16-bit PGM is not supported")
    pos += 1
    raw = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return raw.reshape(height, width), comments


def write_pgm(path, pixels: np.ndarray, comment: str | None = None) -> None:
    """Write rows top-first as binary PGM."""
    h, w = pixels.shape
    header = b"P5\n"
    if comment:
        header += b"# " + comment.encode("ascii") + b"\n"
    header += f"{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


@numba.njit(cache=True)
def _cast(occupied, res, px, py, angles, l_max, dl):
    rows, cols = occupied.shape
    out = np.empty(angles.size)
    n_steps = int(l_max / dl)
    for i in range(angles.size):
        ca = math.cos(angles[i])
        sa = math.sin(angles[i])
        hit = l_max
        for k in range(n_steps + 1):
            d = k * dl
            x = px + d * ca
            y = py + d * sa
            if x < 0.0 or y < 0.0:
                break
            c = int(math.floor(x / res))
            r = int(math.floor(y / res))
            if r >= rows or c >= cols:
                break
            if occupied[r, c]:
                hit = d
                break
        out[i] = hit
    return out


def cast_rays(world: WorldModel2D, x: float, y: float, world_angles: np.ndarray, l_max: float,
              dl: float | None = None) -> np.ndarray:
    """Distance to the first occupied cell along each absolute angle (``l_max`` if none)."""
    step = dl if dl is not None else world.resolution / 2.0
    return _cast(world.occupied, world.resolution, float(x), float(y),
                 np.ascontiguousarray(world_angles, dtype=np.float64), float(l_max), float(step))


def simulate_scan(world: WorldModel2D, true_pose: Pose2D, config: LidarConfig, rs: RandomSource) -> LidarScan:
    if not world.contains(true_pose.x, true_pose.y):
        raise ScenarioError(f"pose ({true_pose.x:.3f}, {true_pose.y:.3f}) lies outside the world")
    angles = config.beam_angles()
    world_angles = true_pose.theta + config.mount_rotation + angles
    ranges = cast_rays(world, true_pose.x, true_pose.y, world_angles, config.l_max, config.step)
    hit = ranges < config.l_max
    ranges = np.maximum(ranges, config.l_min)
    if config.sigma_range > 0:
        noise = rs.generator.normal(0.0, config.sigma_range, size=ranges.size)
        ranges = np.where(hit, np.clip(ranges + noise, config.l_min, config.l_max), ranges)
    if config.dropout_prob > 0:
        drop = rs.generator.random(ranges.size) < config.dropout_prob
        ranges = np.where(drop, config.l_max, ranges)
    return LidarScan(ranges, angles, config.l_max, config.l_min, config.mount_rotation)
