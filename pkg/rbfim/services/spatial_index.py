"""Nearest-neighbour and radius queries over normalized point sets.

Thin layer over ``scipy.spatial.cKDTree`` that pins down the two details the
metric relies on: ties in ``nearest`` resolve to the lowest point id, and
``within_radius`` uses a strict ``< R`` test with ids returned in ascending
order.
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.spatial import cKDTree

from rbfim.core.errors import InsufficientPointsError


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return arr.reshape(-1, 3)


@dataclass(frozen=True)
class SpatialIndex:
    points: np.ndarray
    tree: cKDTree = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    def __len__(self) -> int:
        return self.size

    def nearest(self, q) -> Tuple[int, float]:
        ids, dists = self.nearest_many(_as_points(q))
        return int(ids[0]), float(dists[0])

    def nearest_many(self, queries) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest point id and Euclidean distance for every query row."""
        queries = _as_points(queries)
        n_q = queries.shape[0]
        if n_q == 0:
            return np.empty(0, dtype=np.int64), np.empty(0)

        k = min(4, self.size)
        dists, ids = self.tree.query(queries, k=k)
        dists = np.asarray(dists).reshape(n_q, k)
        ids = np.asarray(ids).reshape(n_q, k)

        # Recompute distances exactly so equal points compare equal
        exact = np.linalg.norm(self.points[ids] - queries[:, None, :], axis=2)
        best = exact.min(axis=1)
        tied = exact == best[:, None]
        out_ids = np.where(tied, ids, np.iinfo(np.int64).max).min(axis=1)

        # Every returned candidate tied: lower ids may sit beyond k
        crowded = np.flatnonzero(tied.all(axis=1)) if k < self.size else np.empty(0, dtype=np.int64)
        for row in crowded:
            cand = np.asarray(self.tree.query_ball_point(queries[row], best[row] * (1 + 1e-12) + 1e-300))
            cand_d = np.linalg.norm(self.points[cand] - queries[row], axis=1)
            cand = cand[cand_d == cand_d.min()]
            out_ids[row] = int(cand.min())
            best[row] = float(cand_d.min())

        return out_ids.astype(np.int64), best

    def within_radius(self, c, radius: float) -> np.ndarray:
        """Ids with distance strictly below `radius`, ascending."""
        if not radius > 0:
            raise ValueError("radius must be positive")
        center = _as_points(c)[0]
        cand = np.asarray(self.tree.query_ball_point(center, radius * (1 + 1e-9)), dtype=np.int64)
        if cand.size == 0:
            return cand
        d = np.linalg.norm(self.points[cand] - center, axis=1)
        return np.sort(cand[d < radius])

    def count_within(self, c, radius: float) -> int:
        return int(self.within_radius(c, radius).size)

    def knn(self, queries, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """(ids, distances) of the k nearest points per query, shape (n, k)."""
        queries = _as_points(queries)
        k = min(k, self.size)
        dists, ids = self.tree.query(queries, k=k)
        return np.asarray(ids).reshape(-1, k), np.asarray(dists).reshape(-1, k)


def build_index(points) -> SpatialIndex:
    arr = _as_points(points)
    if arr.shape[0] == 0:
        raise InsufficientPointsError("cannot index an empty point set")
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return SpatialIndex(points=arr, tree=cKDTree(arr))
