"""Particle filter localization and grid SLAM.

Particles are stored as arrays: ``poses`` is (M, 3) with columns x, y, theta
and ``weights`` is (M,). Every operation returns a new :class:`ParticleSet`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .core import ContractViolation, DomainError, Frame, Pose2D, RandomSource, Velocity2D, normalize_angles
from .mapping import LogOddsParams, OccupancyGrid, integrate_scan, log_odds_to_prob
from .sensing import LidarScan

BIG_E = 1e12


@dataclass(frozen=True)
class Particle:
    pose: Pose2D
    weight: float


@dataclass
class ParticleSet:
    poses: np.ndarray
    weights: np.ndarray
    w_slow: float = 0.0
    w_fast: float = 0.0

    def __post_init__(self):
        self.poses = np.array(self.poses, dtype=float).reshape(-1, 3)
        self.weights = np.array(self.weights, dtype=float).reshape(-1)
        if self.poses.shape[0] != self.weights.size:
            raise ValueError("one weight per particle is required")
        if self.poses.shape[0] == 0:
            raise ValueError("particle set is empty")
        self.poses[:, 2] = normalize_angles(self.poses[:, 2])

    def __len__(self) -> int:
        return self.weights.size

    @property
    def particles(self) -> list[Particle]:
        return [Particle(Pose2D(*p), float(w)) for p, w in zip(self.poses, self.weights)]

    @classmethod
    def at_pose(cls, pose: Pose2D, m: int) -> "ParticleSet":
        return cls(np.tile(pose.as_tuple(), (m, 1)), np.full(m, 1.0 / m))

    @classmethod
    def uniform_free(cls, grid: OccupancyGrid, m: int, rs: RandomSource, theta: float | None = None,
                     free_below: float = 0.35) -> "ParticleSet":
        """Positions spread uniformly over free cells; heading fixed or uniform."""
        xy = _sample_free_points(grid, m, rs, free_below)
        th = np.full(m, theta) if theta is not None else rs.generator.uniform(0.0, 2 * math.pi, m)
        return cls(np.column_stack([xy, th]), np.full(m, 1.0 / m))

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.poses.copy(), self.weights.copy(), self.w_slow, self.w_fast)

    def best(self) -> Pose2D:
        return Pose2D(*self.poses[int(np.argmax(self.weights))])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "x", "y", "theta", "weight"])
            for i, (p, wt) in enumerate(zip(self.poses, self.weights)):
                w.writerow([i, repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(wt))])


@dataclass(frozen=True)
class MotionNoise:
    sigma_bar_x: float = 0.25
    sigma_bar_y: float = 0.25
    sigma_bar_theta: float = 0.0
    sigma_x: float = 1.5
    sigma_y: float = 1.5
    sigma_theta: float = 0.005

    def __post_init__(self):
        if min(self.sigma_x, self.sigma_y, self.sigma_theta) < 0:
            raise DomainError("noise spreads must be >= 0")


@dataclass(frozen=True)
class ResampleParams:
    alpha_slow: float = 0.0125
    alpha_fast: float = 62.5
    omega_floor: float = 0.025
    drift_gamma: float = 0.1
    theta_eps: float = math.radians(1.414)
    inject: bool = True  # False gives plain low-variance resampling

    def __post_init__(self):
        if not 0 < self.alpha_slow < self.alpha_fast:
            raise DomainError("need 0 < alpha_slow < alpha_fast")
        if not 0 <= self.omega_floor <= 1:
            raise DomainError("omega_floor must be a probability")


@dataclass(frozen=True)
class ClusterParams:
    k: int = 3
    n: int = 100

    def __post_init__(self):
        if self.k < 1 or self.n < 1:
            raise DomainError("need k >= 1 and n >= 1")


@dataclass(frozen=True)
class MeasurementParams:
    beam_stride: int = 1
    step: float | None = None  # ray-march step, None = half a cell
    hit_threshold: float = 0.65
    p_hit_floor: float = 0.05
    big_e: float = BIG_E


@dataclass(frozen=True)
class FilterParams:
    noise: MotionNoise = field(default_factory=MotionNoise)
    resample: ResampleParams = field(default_factory=ResampleParams)
    cluster: ClusterParams = field(default_factory=ClusterParams)
    measurement: MeasurementParams = field(default_factory=MeasurementParams)
    logodds: LogOddsParams = field(default_factory=LogOddsParams)
    free_on_max_range: bool = False
    free_below: float = 0.35


def _noise_factors(rs: RandomSource, m: int, bar: float, sigma: float) -> np.ndarray:
    if sigma == 0:
        return np.full(m, 1.0 - bar)
    return rs.generator.normal(1.0 - bar, sigma, size=m)


def motion_model(v: Velocity2D, ps: ParticleSet, noise: MotionNoise, rs: RandomSource) -> ParticleSet:
    """Propagate each particle by the odometry twist with multiplicative noise."""
    v.require(Frame.GLOBAL)
    m = len(ps)
    th = ps.poses[:, 2]
    c, s = np.cos(th), np.sin(th)
    dx = v.vx * c + v.vy * s
    dy = -v.vx * s + v.vy * c
    tx = dx * _noise_factors(rs, m, noise.sigma_bar_x, noise.sigma_x)
    ty = dy * _noise_factors(rs, m, noise.sigma_bar_y, noise.sigma_y)
    rth = _noise_factors(rs, m, noise.sigma_bar_theta, noise.sigma_theta)
    poses = np.column_stack([
        ps.poses[:, 0] + tx * c - ty * s,
        ps.poses[:, 1] + tx * s + ty * c,
        th + v.omega * rth,
    ])
    return ParticleSet(poses, ps.weights.copy(), ps.w_slow, ps.w_fast)


def beam_weight_kernel(x: float, cap: float = BIG_E) -> float:
    """x**8 + exp(x), saturating at ``cap``."""
    if x < 0 or math.isnan(x):
        raise DomainError("kernel input must be >= 0")
    return _kernel(float(x), float(cap))


@numba.njit(cache=True)
def _kernel(x, cap):
    if x >= 40.0:
        return cap
    return min(x ** 8 + math.exp(x), cap)


@numba.njit(cache=True)
def _weigh(px, py, pth, angles, ranges, hit, phit, ox, oy, res, l_max, dl, outside_hits, cap):
    rows, cols = hit.shape
    m = px.size
    n = ranges.size
    out = np.empty(m)
    n_steps = int(math.floor(l_max / dl + 1e-9))
    for i in range(m):
        zbar = 0.0
        for j in range(n):
            a = pth[i] + angles[j]
            ca = math.cos(a)
            sa = math.sin(a)
            l = ranges[j]
            r = int(math.floor((py[i] + l * sa - oy) / res + 0.5))
            c = int(math.floor((px[i] + l * ca - ox) / res + 0.5))
            if 0 <= r < rows and 0 <= c < cols:
                p_hit = phit[r, c]
            else:
                p_hit = 0.5
            lp = l_max + dl
            for k in range(n_steps + 1):
                d = k * dl
                r = int(math.floor((py[i] + d * sa - oy) / res + 0.5))
                c = int(math.floor((px[i] + d * ca - ox) / res + 0.5))
                if 0 <= r < rows and 0 <= c < cols:
                    if hit[r, c]:
                        lp = d
                        break
                else:
                    # the grid is a rectangle: a ray that leaves it never returns
                    if outside_hits:
                        lp = d
                    break
            if lp < l_max:
                zbar += _kernel(abs(l - lp) / p_hit, cap)
            else:
                zbar += cap
        out[i] = n / zbar
    return out


def raw_weights(scan: LidarScan, ps: ParticleSet, grid: OccupancyGrid,
                mp: MeasurementParams = MeasurementParams()) -> np.ndarray:
    """Unnormalised particle weights ``1 / mean_beam f(eps / p_hit)``.

    Max-range readings carry no return and are skipped; an empty array is
    returned when no usable beam remains.
    """
    if len(scan) == 0:
        raise ContractViolation("scan has no beams")
    sel = np.arange(0, len(scan), max(1, int(mp.beam_stride)))
    sel = sel[scan.ranges[sel] < scan.l_max]
    if sel.size == 0:
        return np.empty(0)
    prob = grid.probabilities()
    hit = prob >= mp.hit_threshold
    phit = np.maximum(prob, mp.p_hit_floor)
    dl = mp.step if mp.step is not None else grid.resolution / 2.0
    angles = scan.angles[sel] + scan.mount_rotation
    return _weigh(ps.poses[:, 0].copy(), ps.poses[:, 1].copy(), ps.poses[:, 2].copy(), angles,
                  scan.ranges[sel].copy(), hit, phit, grid.origin[0], grid.origin[1], grid.resolution,
                  float(scan.l_max), float(dl), bool(0.5 >= mp.hit_threshold), float(mp.big_e))


def measurement_model(scan: LidarScan, ps: ParticleSet, grid: OccupancyGrid, params: ResampleParams,
                      mp: MeasurementParams = MeasurementParams()) -> tuple[ParticleSet, float, float]:
    w = raw_weights(scan, ps, grid, mp)
    m = len(ps)
    if w.size == 0:
        out = ParticleSet(ps.poses.copy(), np.full(m, 1.0 / m), ps.w_slow, ps.w_fast)
        return out, out.w_fast, out.w_slow
    total = float(w.sum())
    w_avg = total / m
    # a discount rate above one overshoots and diverges, so it is capped
    w_slow = ps.w_slow + min(params.alpha_slow, 1.0) * (w_avg - ps.w_slow)
    w_fast = ps.w_fast + min(params.alpha_fast, 1.0) * (w_avg - ps.w_fast)
    out = ParticleSet(ps.poses.copy(), w / total, w_slow, w_fast)
    return out, w_fast, w_slow


def injection_probability(w_fast: float, w_slow: float, omega_floor: float) -> float:
    if w_slow <= 0:
        return omega_floor
    return max(omega_floor, 1.0 - w_fast / w_slow)


def _sample_free_points(grid: OccupancyGrid, n: int, rs: RandomSource, free_below: float = 0.35) -> np.ndarray:
    free = np.argwhere(grid.probabilities() < free_below)
    res = grid.resolution
    if free.size == 0:
        xmin, ymin, xmax, ymax = grid.bounds()
        return np.column_stack([rs.generator.uniform(xmin, xmax, n), rs.generator.uniform(ymin, ymax, n)])
    pick = free[rs.generator.integers(0, len(free), size=n)]
    jitter = rs.generator.uniform(-0.5, 0.5, size=(n, 2)) * res
    return np.column_stack([grid.origin[0] + pick[:, 1] * res, grid.origin[1] + pick[:, 0] * res]) + jitter


def low_variance_indices(weights: np.ndarray, r: float, slots) -> np.ndarray:
    """Index chosen for each slot m: the first j whose cumulative weight reaches r + m/M."""
    m = weights.size
    out = np.empty(len(slots), dtype=np.int64)
    idx = 0
    c = float(weights[0])
    for i, slot in enumerate(slots):
        u = r + slot / m
        while u > c and idx < m - 1:
            idx += 1
            c += float(weights[idx])
        out[i] = idx
    return out


def resample(ps: ParticleSet, params: ResampleParams, grid: OccupancyGrid, rs: RandomSource,
             free_below: float = 0.35) -> ParticleSet:
    """Low-variance resampling with random-particle injection."""
    m = len(ps)
    p_inject = injection_probability(ps.w_fast, ps.w_slow, params.omega_floor) if params.inject else 0.0
    r = rs.uniform(0.0, 1.0 / m)
    inject = rs.generator.random(m) < p_inject
    poses = np.empty((m, 3))
    weights = np.empty(m)

    keep = np.flatnonzero(~inject)
    if keep.size:
        idx = low_variance_indices(ps.weights, r, keep)
        poses[keep] = ps.poses[idx]
        weights[keep] = ps.weights[idx]

    inj = np.flatnonzero(inject)
    if inj.size:
        target = _sample_free_points(grid, inj.size, rs, free_below)
        src = ps.poses[inj]
        d = target - src[:, :2]
        length = np.hypot(d[:, 0], d[:, 1])
        length[length == 0] = np.inf
        poses[inj, :2] = src[:, :2] + params.drift_gamma * d / length[:, None]
        poses[inj, 2] = rs.generator.uniform(src[:, 2] - params.theta_eps, src[:, 2] + params.theta_eps)
        weights[inj] = ps.weights[inj] / m

    total = weights.sum()
    weights = weights / total if total > 0 else np.full(m, 1.0 / m)
    return ParticleSet(poses, weights, ps.w_slow, ps.w_fast)


def _feature_dist2(poses: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    dx = poses[:, None, 0] - centroids[None, :, 0]
    dy = poses[:, None, 1] - centroids[None, :, 1]
    dth = np.angle(np.exp(1j * (poses[:, None, 2] - centroids[None, :, 2])))
    return dx * dx + dy * dy + dth * dth


def kmeans(ps: ParticleSet, cp: ClusterParams, rs: RandomSource) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd k-means over (x, y, theta); returns centroids (k, 3) and labels (M,)."""
    m = len(ps)
    if m < cp.k:
        raise ContractViolation("need at least k particles")
    poses, w = ps.poses, ps.weights
    base = w / w.sum() if w.sum() > 0 else np.full(m, 1.0 / m)
    # weighted seeding, spread out k-means++ style
    chosen = [int(rs.generator.choice(m, p=base))]
    for _ in range(1, cp.k):
        d2 = _feature_dist2(poses, poses[chosen]).min(axis=1)
        p = base * d2
        p = p / p.sum() if p.sum() > 0 else base
        chosen.append(int(rs.generator.choice(m, p=p)))
    centroids = poses[chosen].copy()
    labels = np.full(m, -1)
    for _ in range(cp.n):
        new = np.argmin(_feature_dist2(poses, centroids), axis=1)
        reseeded = False
        for j in range(cp.k):
            members = poses[new == j]
            if members.size == 0:
                centroids[j] = poses[int(rs.generator.integers(0, m))]
                reseeded = True
                continue
            centroids[j, :2] = members[:, :2].mean(axis=0)
            centroids[j, 2] = math.atan2(np.sin(members[:, 2]).mean(), np.cos(members[:, 2]).mean())
        converged = np.array_equal(new, labels) and not reseeded
        labels = new
        if converged:
            break
    centroids[:, 2] = normalize_angles(centroids[:, 2])
    return centroids, labels


def kmeans_extract(ps: ParticleSet, cp: ClusterParams, rs: RandomSource) -> Pose2D:
    """Centroid of the cluster with the highest average particle weight."""
    centroids, labels = kmeans(ps, cp, rs)
    best, best_w = 0, -1.0
    for j in range(cp.k):
        mask = labels == j
        if not mask.any():
            continue
        avg = float(ps.weights[mask].mean())
        if avg > best_w:
            best, best_w = j, avg
    return Pose2D(*centroids[best])


def mcl_step(v: Velocity2D, scan: LidarScan, ps: ParticleSet, grid: OccupancyGrid, params: FilterParams,
             rs: RandomSource) -> tuple[Pose2D, ParticleSet]:
    ps = motion_model(v, ps, params.noise, rs)
    ps, _, _ = measurement_model(scan, ps, grid, params.resample, params.measurement)
    ps = resample(ps, params.resample, grid, rs, params.free_below)
    return kmeans_extract(ps, params.cluster, rs), ps


def slam_step(v: Velocity2D, scan: LidarScan, ps: ParticleSet, grid: OccupancyGrid, params: FilterParams,
              rs: RandomSource) -> tuple[Pose2D, OccupancyGrid, ParticleSet]:
    """One SLAM cycle; ``grid`` is updated in place and also returned."""
    ps = motion_model(v, ps, params.noise, rs)
    integrate_scan(grid, scan, ps.best(), params.logodds, params.free_on_max_range)
    ps, _, _ = measurement_model(scan, ps, grid, params.resample, params.measurement)
    ps = resample(ps, params.resample, grid, rs, params.free_below)
    return kmeans_extract(ps, params.cluster, rs), grid, ps


def with_logodds(params: FilterParams, logodds: LogOddsParams) -> FilterParams:
    return replace(params, logodds=logodds)
