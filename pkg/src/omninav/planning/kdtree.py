"""Insertion-only 2-d tree and a linear-scan index with the same interface.

Both backends are compiled with numba so that timing comparisons measure the
data structure rather than interpreter overhead. Ties in distance go to the
point inserted first.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from ..core import ContractViolation

_EMPTY = -1


@numba.njit(cache=True)
def _kd_insert(pts, child, n, x, y):
    pts[n, 0] = x
    pts[n, 1] = y
    child[n, 0] = _EMPTY
    child[n, 1] = _EMPTY
    if n == 0:
        return
    node = 0
    depth = 0
    while True:
        axis = depth & 1
        side = 0 if (x if axis == 0 else y) < pts[node, axis] else 1
        if child[node, side] == _EMPTY:
            child[node, side] = n
            return
        node = child[node, side]
        depth += 1


@numba.njit(cache=True)
def _kd_nearest(pts, child, n, qx, qy, stack, bound):
    # stack rows hold (node, depth); bounds hold the squared distance to the splitting line
    best = -1
    best_d2 = np.inf
    stack[0, 0] = 0
    stack[0, 1] = 0
    bound[0] = 0.0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        depth = stack[top, 1]
        if bound[top] > best_d2:
            continue
        dx = pts[node, 0] - qx
        dy = pts[node, 1] - qy
        d2 = dx * dx + dy * dy
        if d2 < best_d2 or (d2 == best_d2 and node < best):
            best = node
            best_d2 = d2
        axis = depth & 1
        diff = (qx if axis == 0 else qy) - pts[node, axis]
        near = child[node, 0] if diff < 0 else child[node, 1]
        far = child[node, 1] if diff < 0 else child[node, 0]
        if far != _EMPTY:
            stack[top, 0] = far
            stack[top, 1] = depth + 1
            bound[top] = diff * diff
            top += 1
        if near != _EMPTY:
            stack[top, 0] = near
            stack[top, 1] = depth + 1
            bound[top] = 0.0
            top += 1
    return best


@numba.njit(cache=True)
def _kd_radius(pts, child, n, qx, qy, r2, out, stack):
    count = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        depth = stack[top, 1]
        dx = pts[node, 0] - qx
        dy = pts[node, 1] - qy
        if dx * dx + dy * dy <= r2:
            out[count] = node
            count += 1
        axis = depth & 1
        diff = (qx if axis == 0 else qy) - pts[node, axis]
        left = child[node, 0]
        right = child[node, 1]
        if left != _EMPTY and (diff < 0 or diff * diff <= r2):
            stack[top, 0] = left
            stack[top, 1] = depth + 1
            top += 1
        if right != _EMPTY and (diff >= 0 or diff * diff <= r2):
            stack[top, 0] = right
            stack[top, 1] = depth + 1
            top += 1
    return count


@numba.njit(cache=True)
def _linear_nearest(pts, n, qx, qy):
    best = -1
    best_d2 = np.inf
    for i in range(n):
        dx = pts[i, 0] - qx
        dy = pts[i, 1] - qy
        d2 = dx * dx + dy * dy
        if d2 < best_d2:
            best = i
            best_d2 = d2
    return best


@numba.njit(cache=True)
def _linear_radius(pts, n, qx, qy, r2, out):
    count = 0
    for i in range(n):
        dx = pts[i, 0] - qx
        dy = pts[i, 1] - qy
        if dx * dx + dy * dy <= r2:
            out[count] = i
            count += 1
    return count


class _PointStore:
    def __init__(self, capacity: int = 64):
        cap = max(1, int(capacity))
        self._pts = np.empty((cap, 2))
        self._ids = np.empty(cap, dtype=np.int64)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def _grow(self) -> None:
        cap = 2 * self._pts.shape[0]
        pts = np.empty((cap, 2))
        pts[: self._n] = self._pts[: self._n]
        ids = np.empty(cap, dtype=np.int64)
        ids[: self._n] = self._ids[: self._n]
        self._pts, self._ids = pts, ids

    def _check_point(self, point) -> tuple[float, float]:
        x, y = float(point[0]), float(point[1])
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError("point must be finite")
        return x, y

    def _require_nonempty(self) -> None:
        if self._n == 0:
            raise ContractViolation("nearest query on an empty index")

    def points(self) -> np.ndarray:
        return self._pts[: self._n].copy()


class KdTree(_PointStore):
    """2-d tree storing caller-supplied ids; splits alternate x, y, x, ..."""

    def __init__(self, capacity: int = 64):
        super().__init__(capacity)
        cap = self._pts.shape[0]
        self._child = np.full((cap, 2), _EMPTY, dtype=np.int64)
        self._buf = np.empty(cap, dtype=np.int64)
        self._stack = np.empty((cap + 1, 2), dtype=np.int64)
        self._bound = np.empty(cap + 1)

    def _grow(self) -> None:
        super()._grow()
        cap = self._pts.shape[0]
        child = np.full((cap, 2), _EMPTY, dtype=np.int64)
        child[: self._child.shape[0]] = self._child
        self._child = child
        self._buf = np.empty(cap, dtype=np.int64)
        self._stack = np.empty((cap + 1, 2), dtype=np.int64)
        self._bound = np.empty(cap + 1)

    def insert(self, point, id: int) -> "KdTree":
        x, y = self._check_point(point)
        if self._n == self._pts.shape[0]:
            self._grow()
        _kd_insert(self._pts, self._child, self._n, x, y)
        self._ids[self._n] = id
        self._n += 1
        return self

    def nearest(self, query) -> tuple[int, tuple[float, float]]:
        self._require_nonempty()
        i = _kd_nearest(self._pts, self._child, self._n, float(query[0]), float(query[1]), self._stack,
                        self._bound)
        return int(self._ids[i]), (float(self._pts[i, 0]), float(self._pts[i, 1]))

    def within_radius(self, query, r: float) -> list[tuple[int, tuple[float, float]]]:
        if r < 0:
            raise ValueError("radius must be >= 0")
        if self._n == 0:
            return []
        k = _kd_radius(self._pts, self._child, self._n, float(query[0]), float(query[1]), float(r) * float(r),
                       self._buf, self._stack)
        return [(int(self._ids[i]), (float(self._pts[i, 0]), float(self._pts[i, 1]))) for i in self._buf[:k]]


class LinearIndex(_PointStore):
    """Plain array scanned in full on every query."""

    def __init__(self, capacity: int = 64):
        super().__init__(capacity)
        self._buf = np.empty(self._pts.shape[0], dtype=np.int64)

    def insert(self, point, id: int) -> "LinearIndex":
        x, y = self._check_point(point)
        if self._n == self._pts.shape[0]:
            self._grow()
            self._buf = np.empty(self._pts.shape[0], dtype=np.int64)
        self._pts[self._n] = (x, y)
        self._ids[self._n] = id
        self._n += 1
        return self

    def nearest(self, query) -> tuple[int, tuple[float, float]]:
        self._require_nonempty()
        i = _linear_nearest(self._pts, self._n, float(query[0]), float(query[1]))
        return int(self._ids[i]), (float(self._pts[i, 0]), float(self._pts[i, 1]))

    def within_radius(self, query, r: float) -> list[tuple[int, tuple[float, float]]]:
        if r < 0:
            raise ValueError("radius must be >= 0")
        k = _linear_radius(self._pts, self._n, float(query[0]), float(query[1]), float(r) * float(r), self._buf)
        return [(int(self._ids[i]), (float(self._pts[i, 0]), float(self._pts[i, 1]))) for i in self._buf[:k]]


INDEXES = {"kd": KdTree, "array": LinearIndex}


def kd_insert(t: KdTree, point, id: int) -> KdTree:
    return t.insert(point, id)


def kd_nearest(t: KdTree, query) -> tuple[int, tuple[float, float]]:
    return t.nearest(query)


def kd_within_radius(t: KdTree, query, r: float) -> list[tuple[int, tuple[float, float]]]:
    return t.within_radius(query, r)
