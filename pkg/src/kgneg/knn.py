"""Exact k-nearest-neighbour search with a ball tree (Euclidean metric).

Nodes are kept in flat arrays; a node owns the slice
``order[start:end]`` of the point permutation.  Queries run best-first
over node lower bounds and keep the k best ``(distance, id)`` pairs, so
equal distances resolve to the smaller id exactly as a sorted linear
scan would.
"""

from __future__ import annotations

import heapq
from typing import Sequence

import numpy as np

# Bound arithmetic can be off by a few ulps; never prune a node that
# might hold a point tied with the current k-th best.
_PRUNE_SLACK = 1e-9


class KnnIndex:
    """Immutable exact nearest-neighbour index.

    :param points: ``(M, d)`` array (or sequence of equal-length vectors).
    :param ids: optional id per row; defaults to ``0..M-1``.
    :param leaf_size: maximum number of points in a leaf.
    """

    def __init__(self, points, ids: Sequence[int] | None = None, leaf_size: int = 32):
        try:
            data = np.array(points, dtype=np.float64)
        except ValueError as exc:
            raise ValueError(f"dimension mismatch among points: {exc}") from None
        if data.ndim != 2:
            raise ValueError("dimension mismatch: points must form an (M, d) array")
        if data.shape[0] < 1:
            raise ValueError("need at least one point")
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        self.data = data
        self.data.flags.writeable = False
        self.ids = np.arange(len(data), dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
        if self.ids.shape != (len(data),):
            raise ValueError("ids must have one entry per point")
        self.leaf_size = leaf_size
        self.dim = data.shape[1]

        self.order = np.arange(len(data))
        self._start: list[int] = []
        self._end: list[int] = []
        self._centroid: list[np.ndarray] = []
        self._radius: list[float] = []
        self._children: list[tuple[int, int] | None] = []
        self._build(0, len(data))
        self.centroids = np.array(self._centroid)
        self.radii = np.array(self._radius)

    def _new_node(self, start: int, end: int) -> int:
        pts = self.data[self.order[start:end]]
        c = pts.mean(axis=0)
        self._start.append(start)
        self._end.append(end)
        self._centroid.append(c)
        self._radius.append(float(np.sqrt(np.max(np.sum((pts - c) ** 2, axis=1)))))
        self._children.append(None)
        return len(self._start) - 1

    def _build(self, start: int, end: int) -> int:
        node = self._new_node(start, end)
        stack = [node]
        while stack:
            n = stack.pop()
            s, e = self._start[n], self._end[n]
            if e - s <= self.leaf_size:
                continue
            idx = self.order[s:e]
            pts = self.data[idx]
            spread = pts.max(axis=0) - pts.min(axis=0)
            axis = int(np.argmax(spread))
            if spread[axis] == 0.0:
                continue  # all points identical: keep as an oversized leaf
            mid = (e - s) // 2
            part = np.argpartition(pts[:, axis], mid, kind="introselect")
            self.order[s:e] = idx[part]
            left = self._new_node(s, s + mid)
            right = self._new_node(s + mid, e)
            self._children[n] = (left, right)
            stack.extend([left, right])
        return node

    @property
    def n_nodes(self) -> int:
        return len(self._start)

    def __len__(self) -> int:
        return len(self.data)

    def _lower_bound(self, node: int, q: np.ndarray) -> float:
        d = float(np.sqrt(np.sum((self.centroids[node] - q) ** 2)))
        return max(0.0, d - self.radii[node])

    def query(self, point, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(ids, distances)`` of the ``k`` nearest points, nearest first."""
        q = np.asarray(point, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query has shape {q.shape}, index dimension is {self.dim}")
        k = min(int(k), len(self.data))
        if k < 1:
            return np.empty(0, np.int64), np.empty(0)
        best: list[tuple[float, int]] = []  # max-heap via negation: (-dist, -id)
        frontier = [(self._lower_bound(0, q), 0)]
        while frontier:
            lb, node = heapq.heappop(frontier)
            if len(best) == k and lb - _PRUNE_SLACK > -best[0][0]:
                break
            children = self._children[node]
            if children is None:
                rows = self.order[self._start[node] : self._end[node]]
                dists = np.sqrt(np.sum((self.data[rows] - q) ** 2, axis=1))
                for dist, pid in zip(dists.tolist(), self.ids[rows].tolist()):
                    if len(best) < k:
                        heapq.heappush(best, (-dist, -pid))
                    elif (dist, pid) < (-best[0][0], -best[0][1]):
                        heapq.heapreplace(best, (-dist, -pid))
            else:
                for child in children:
                    heapq.heappush(frontier, (self._lower_bound(child, q), child))
        result = sorted((-d, -i) for d, i in best)
        return np.array([i for _, i in result], dtype=np.int64), np.array([d for d, _ in result])

    def query_many(self, points, k: int) -> list[np.ndarray]:
        return [self.query(p, k)[0] for p in np.asarray(points, dtype=np.float64)]


def build_knn_index(points, ids: Sequence[int] | None = None, leaf_size: int = 32) -> KnnIndex:
    return KnnIndex(points, ids=ids, leaf_size=leaf_size)
