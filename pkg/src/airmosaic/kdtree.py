"""Balanced 2-d tree over (easting, northing) points with payload indices.

Median-split construction, iterative query traversal. Results are defined to
match brute force exactly (same indices, same distances); the test suite pins
that equivalence.
"""

from __future__ import annotations

import numpy as np


class KdTree2:
    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] < 2:
            raise ValueError("points must be (N, >=2); only x/y are indexed")
        self.points = np.ascontiguousarray(pts[:, :2])
        n = len(self.points)
        if n == 0:
            raise ValueError("empty point set")
        self._left = np.full(n, -1, dtype=np.int64)
        self._right = np.full(n, -1, dtype=np.int64)
        self._axis = np.zeros(n, dtype=np.int8)
        self._root = self._build(np.arange(n), 0)
        # Flat python lists make the traversal loop noticeably faster than
        # repeated numpy scalar indexing.
        self._px = self.points[:, 0].tolist()
        self._py = self.points[:, 1].tolist()
        self._l = self._left.tolist()
        self._r = self._right.tolist()
        self._ax = self._axis.tolist()

    def _build(self, idx: np.ndarray, depth: int) -> int:
        if len(idx) == 0:
            return -1
        axis = depth % 2
        if len(idx) == 1:
            node = int(idx[0])
            self._axis[node] = axis
            return node
        order = np.argsort(self.points[idx, axis], kind="stable")
        idx = idx[order]
        mid = len(idx) // 2
        node = int(idx[mid])
        self._axis[node] = axis
        self._left[node] = self._build(idx[:mid], depth + 1)
        self._right[node] = self._build(idx[mid + 1 :], depth + 1)
        return node

    def __len__(self) -> int:
        return len(self.points)

    def nearest(self, point, exclude: int = -1) -> tuple[int, float]:
        """Index and distance of the nearest point; ties resolve to the
        lowest index. `exclude` skips one payload index (self-queries)."""
        qx, qy = float(point[0]), float(point[1])
        px, py, left, right, ax = self._px, self._py, self._l, self._r, self._ax
        best_i = -1
        best_d2 = np.inf
        stack = [self._root]
        while stack:
            node = stack.pop()
            if node < 0:
                continue
            dx = qx - px[node]
            dy = qy - py[node]
            d2 = dx * dx + dy * dy
            if node != exclude and (
                d2 < best_d2 or (d2 == best_d2 and node < best_i)
            ):
                best_d2 = d2
                best_i = node
            delta = dx if ax[node] == 0 else dy
            near, far = (left[node], right[node]) if delta < 0 else (right[node], left[node])
            if delta * delta <= best_d2 and far >= 0:
                stack.append(far)
            if near >= 0:
                stack.append(near)
        return best_i, float(np.sqrt(best_d2))

    def radius(self, point, radius: float, cap: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """All payload indices within `radius` (inclusive), sorted by distance
        and then index; `cap` keeps only the nearest that many."""
        qx, qy = float(point[0]), float(point[1])
        r2 = float(radius) * float(radius)
        px, py, left, right, ax = self._px, self._py, self._l, self._r, self._ax
        hits: list[int] = []
        d2s: list[float] = []
        stack = [self._root]
        while stack:
            node = stack.pop()
            if node < 0:
                continue
            dx = qx - px[node]
            dy = qy - py[node]
            d2 = dx * dx + dy * dy
            if d2 <= r2:
                hits.append(node)
                d2s.append(d2)
            delta = dx if ax[node] == 0 else dy
            near, far = (left[node], right[node]) if delta < 0 else (right[node], left[node])
            if delta * delta <= r2 and far >= 0:
                stack.append(far)
            if near >= 0:
                stack.append(near)
        if not hits:
            return np.empty(0, dtype=np.int64), np.empty(0)
        idx = np.asarray(hits, dtype=np.int64)
        dist = np.sqrt(np.asarray(d2s))
        order = np.lexsort((idx, dist))
        idx = idx[order]
        dist = dist[order]
        if cap is not None and len(idx) > cap:
            idx = idx[:cap]
            dist = dist[:cap]
        return idx, dist


def brute_force_nearest(points: np.ndarray, query, exclude: int = -1) -> tuple[int, float]:
    """Reference nearest-neighbor used as the oracle in tests."""
    pts = np.asarray(points, dtype=np.float64)[:, :2]
    d2 = np.sum((pts - np.asarray(query, dtype=np.float64)[:2]) ** 2, axis=1)
    if 0 <= exclude < len(d2):
        d2[exclude] = np.inf
    i = int(np.argmin(d2))
    return i, float(np.sqrt(d2[i]))


def brute_force_radius(points: np.ndarray, query, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Reference radius query (inclusive), sorted by distance then index."""
    pts = np.asarray(points, dtype=np.float64)[:, :2]
    d2 = np.sum((pts - np.asarray(query, dtype=np.float64)[:2]) ** 2, axis=1)
    mask = d2 <= radius * radius
    idx = np.nonzero(mask)[0]
    dist = np.sqrt(d2[idx])
    order = np.lexsort((idx, dist))
    return idx[order].astype(np.int64), dist[order]
