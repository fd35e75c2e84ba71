"""Exact KD-tree over embeddings with incremental insertion.

Leaves hold small buckets of points. An insertion that overflows a bucket
splits it at the median of its widest axis; when the depth outgrows
``2 * log2(size) + 8`` the whole tree is rebuilt balanced.
"""
from __future__ import annotations

import heapq
import math

import numpy as np

from .exceptions import DataError

LEAF_SIZE = 16


class _Node:
    __slots__ = ("axis", "split", "left", "right", "ids", "points")

    def __init__(self):
        self.axis = -1
        self.split = 0.0
        self.left = None
        self.right = None
        self.ids = []
        self.points = []

    @property
    def is_leaf(self):
        return self.axis < 0


class KdIndex:
    """Exact fixed-radius and k-nearest-neighbour search in R^m.

    Parameters
    ----------
    dimension : int
        Embedding dimension ``m``.
    leaf_size : int
        Bucket capacity before a leaf is split.

    Results are ``(keyframe_id, distance)`` lists sorted by distance, ties by id.
    ``last_visits`` holds the number of tree nodes touched by the latest query.
    """

    def __init__(self, dimension: int, leaf_size: int = LEAF_SIZE):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = int(dimension)
        self.leaf_size = int(leaf_size)
        self.root = _Node()
        self.size = 0
        self.depth = 0
        self.rebuilds = 0
        self.last_visits = 0
        self._ids = set()

    def __len__(self):
        return self.size

    def __contains__(self, keyframe_id):
        return keyframe_id in self._ids

    def _vector(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape[0] != self.dimension:
            raise DataError(f"vector dimension {v.shape[0]} != index dimension {self.dimension}")
        return v

    def insert(self, keyframe_id: int, phi) -> "KdIndex":
        phi = self._vector(phi)
        if keyframe_id in self._ids:
            raise DataError(f"keyframe id {keyframe_id} already indexed")
        node, depth = self.root, 0
        while not node.is_leaf:
            node = node.left if phi[node.axis] < node.split else node.right
            depth += 1
        node.ids.append(int(keyframe_id))
        node.points.append(phi)
        self._ids.add(keyframe_id)
        self.size += 1
        if len(node.ids) > self.leaf_size:
            depth = max(depth, self._split_leaf(node, depth))
        self.depth = max(self.depth, depth)
        if self.depth > 2 * math.log2(self.size) + 8:
            self.rebuild()
        return self

    def insert_many(self, items) -> "KdIndex":
        for keyframe_id, phi in items:
            self.insert(keyframe_id, phi)
        return self

    def _split_leaf(self, node: _Node, depth: int) -> int:
        P = np.vstack(node.points)
        spread = P.max(axis=0) - P.min(axis=0)
        axis = int(np.argmax(spread))
        if spread[axis] == 0.0:
            # all points identical: an oversized bucket is the only option
            return depth
        split = float(np.median(P[:, axis]))
        go_left = P[:, axis] < split
        if not go_left.any():
            # median equals the minimum; split just above it instead
            split = float(np.min(P[P[:, axis] > P[:, axis].min(), axis]))
            go_left = P[:, axis] < split
        left, right = _Node(), _Node()
        for i, keep_left in enumerate(go_left):
            target = left if keep_left else right
            target.ids.append(node.ids[i])
            target.points.append(node.points[i])
        node.axis, node.split = axis, split
        node.left, node.right = left, right
        node.ids, node.points = [], []
        return depth + 1

    def rebuild(self) -> None:
        """Rebuild a balanced tree from every stored point."""
        ids, points = [], []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                ids.extend(node.ids)
                points.extend(node.points)
            else:
                stack.extend([node.left, node.right])
        self.rebuilds += 1
        if not ids:
            self.root, self.depth = _Node(), 0
            return
        order = np.argsort(ids, kind="stable")
        ids = [ids[k] for k in order]
        P = np.vstack([points[k] for k in order])
        self.depth = 0
        self.root = self._build(np.asarray(ids), P, 0)

    def _build(self, ids, P, depth) -> _Node:
        node = _Node()
        self.depth = max(self.depth, depth)
        if len(ids) <= self.leaf_size:
            node.ids = [int(i) for i in ids]
            node.points = list(P)
            return node
        spread = P.max(axis=0) - P.min(axis=0)
        axis = int(np.argmax(spread))
        if spread[axis] == 0.0:
            node.ids = [int(i) for i in ids]
            node.points = list(P)
            return node
        split = float(np.median(P[:, axis]))
        go_left = P[:, axis] < split
        if not go_left.any():
            split = float(np.min(P[P[:, axis] > P[:, axis].min(), axis]))
            go_left = P[:, axis] < split
        node.axis, node.split = axis, split
        node.left = self._build(ids[go_left], P[go_left], depth + 1)
        node.right = self._build(ids[~go_left], P[~go_left], depth + 1)
        return node

    @staticmethod
    def _leaf_distances(node: _Node, q: np.ndarray) -> np.ndarray:
        diff = np.vstack(node.points) - q
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def query_radius(self, q, eps: float) -> list:
        """All stored points with ``||phi - q|| <= eps``."""
        q = self._vector(q)
        if eps < 0:
            raise ValueError("eps must be >= 0")
        out = []
        visits = 0
        if self.size:
            stack = [self.root]
            while stack:
                node = stack.pop()
                visits += 1
                if node.is_leaf:
                    if node.ids:
                        d = self._leaf_distances(node, q)
                        out.extend((i, float(di)) for i, di in zip(node.ids, d) if di <= eps)
                    continue
                delta = q[node.axis] - node.split
                if delta < 0:
                    stack.append(node.left)
                    if -delta <= eps:
                        stack.append(node.right)
                else:
                    stack.append(node.right)
                    if delta <= eps:
                        stack.append(node.left)
        self.last_visits = visits
        out.sort(key=lambda r: (r[1], r[0]))
        return out

    def query_knn(self, q, k: int) -> list:
        """The ``min(k, size)`` nearest stored points."""
        q = self._vector(q)
        if k < 1:
            raise ValueError("k must be >= 1")
        # max-heap of the current best via negated keys: (-dist, -id)
        best = []
        visits = 0

        def worst():
            return (-best[0][0], -best[0][1]) if len(best) == k else (math.inf, math.inf)

        def search(node):
            nonlocal visits
            visits += 1
            if node.is_leaf:
                if not node.ids:
                    return
                d = self._leaf_distances(node, q)
                for i, di in zip(node.ids, d):
                    if (di, i) < worst():
                        if len(best) == k:
                            heapq.heapreplace(best, (-di, -i))
                        else:
                            heapq.heappush(best, (-di, -i))
                return
            delta = q[node.axis] - node.split
            near, far = (node.left, node.right) if delta < 0 else (node.right, node.left)
            search(near)
            # <= keeps equal-distance candidates with smaller ids reachable
            if abs(delta) <= worst()[0]:
                search(far)

        if self.size:
            search(self.root)
        self.last_visits = visits
        return sorted(((-i, float(-d)) for d, i in best), key=lambda r: (r[1], r[0]))

    def brute_force_scan(self):
        """All ``(id, phi)`` currently stored, in id order."""
        items = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                items.extend(zip(node.ids, node.points))
            else:
                stack.extend([node.left, node.right])
        return sorted(items, key=lambda r: r[0])
