"""
Point-cloud containers, sampling and neighborhood queries.

Every other module consumes the types defined here. Offsets are always
stored as neighbor minus center (p_ij - p_i); code that needs the
center-minus-neighbor form negates locally.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ConfigError, ShapeError, SizeError

logger = logging.getLogger(__name__)


# =====================================================
# CONTAINERS
# =====================================================

@dataclass(frozen=True, eq=False)
class PointCloud:
    """N x 3 coordinates with optional per-point features, labels and normals."""
    coords: np.ndarray
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ShapeError(f"coords must be N x 3, got {coords.shape}")
        if coords.shape[0] < 1:
            raise SizeError("a point cloud needs at least one point")
        if not np.all(np.isfinite(coords)):
            raise ShapeError("coords must be finite")
        object.__setattr__(self, 'coords', coords)

        n = coords.shape[0]
        if self.features is not None:
            features = np.ascontiguousarray(self.features, dtype=np.float64)
            if features.ndim == 1:
                features = features[:, None]
            if features.shape[0] != n:
                raise ShapeError(f"features have {features.shape[0]} rows for {n} points")
            object.__setattr__(self, 'features', features)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if labels.shape[0] != n:
                raise ShapeError(f"labels have {labels.shape[0]} entries for {n} points")
            object.__setattr__(self, 'labels', labels)
        if self.normals is not None:
            normals = np.ascontiguousarray(self.normals, dtype=np.float64)
            if normals.shape != coords.shape:
                raise ShapeError(f"normals must be {coords.shape}, got {normals.shape}")
            object.__setattr__(self, 'normals', normals)

    @property
    def n_points(self):
        return self.coords.shape[0]

    @property
    def n_features(self):
        return 0 if self.features is None else self.features.shape[1]

    def with_coords(self, coords, normals=None):
        return replace(self, coords=coords, normals=normals if normals is not None else self.normals)

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return PointCloud(
            coords=self.coords[index],
            features=None if self.features is None else self.features[index],
            labels=None if self.labels is None else self.labels[index],
            normals=None if self.normals is None else self.normals[index],
        )


@dataclass(frozen=True, eq=False)
class NeighborhoodIndex:
    """
    Per-center neighbor lists.

    Rows shorter than k (ball query) are padded by repeating the first
    valid neighbor; valid_counts keeps the true length.
    """
    centers: np.ndarray
    neighbors: np.ndarray
    valid_counts: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.int64).reshape(-1)
        neighbors = np.asarray(self.neighbors, dtype=np.int64)
        valid = np.asarray(self.valid_counts, dtype=np.int64).reshape(-1)
        if neighbors.ndim != 2 or neighbors.shape[0] != centers.shape[0]:
            raise ShapeError(f"neighbors must be M x k with M={centers.shape[0]}, got {neighbors.shape}")
        if valid.shape[0] != centers.shape[0]:
            raise ShapeError("valid_counts must have one entry per center")
        if np.any(valid < 1) or np.any(valid > neighbors.shape[1]):
            raise ShapeError("valid_counts must lie in [1, k]")
        object.__setattr__(self, 'centers', centers)
        object.__setattr__(self, 'neighbors', neighbors)
        object.__setattr__(self, 'valid_counts', valid)

    @property
    def m(self):
        return self.centers.shape[0]

    @property
    def k(self):
        return self.neighbors.shape[1]

    def valid_mask(self):
        return np.arange(self.k)[None, :] < self.valid_counts[:, None]

    def check_against(self, n_points):
        if self.centers.size and (self.centers.max() >= n_points or self.centers.min() < 0):
            raise SizeError("center index out of range")
        if self.neighbors.size and (self.neighbors.max() >= n_points or self.neighbors.min() < 0):
            raise SizeError("neighbor index out of range")

    def shifted(self, offset):
        """Same neighborhoods with every index moved by offset (batch stacking)."""
        return NeighborhoodIndex(self.centers + offset, self.neighbors + offset, self.valid_counts)

    @staticmethod
    def concatenate(indices, sizes):
        """Stack neighborhoods of several clouds whose point counts are sizes."""
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        shifted = [idx.shifted(start) for idx, start in zip(indices, starts)]
        return NeighborhoodIndex(
            centers=np.concatenate([s.centers for s in shifted]),
            neighbors=np.concatenate([s.neighbors for s in shifted]),
            valid_counts=np.concatenate([s.valid_counts for s in shifted]),
        )


# =====================================================
# SAMPLING & NEIGHBORHOOD QUERIES
# =====================================================

def _coords(cloud):
    return cloud.coords if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


def squared_distances(coords, points):
    """Squared Euclidean distances from every coords row to each row of points -> (P, N)."""
    diff = coords[None, :, :] - points[:, None, :]
    return np.sum(diff * diff, axis=2)


def farthest_point_sample(cloud, m, start=0):
    """
    Greedy farthest point sampling.

    Each pick maximizes the minimum squared distance to the already-picked
    set; argmax ties resolve to the smallest index.
    """
    coords = _coords(cloud)
    n = coords.shape[0]
    if m < 1 or m > n:
        raise SizeError(f"cannot sample {m} centers from {n} points")
    if not 0 <= start < n:
        raise SizeError(f"start index {start} out of range for {n} points")

    picked = np.empty(m, dtype=np.int64)
    picked[0] = start
    min_dist = np.full(n, np.inf)
    taken = np.zeros(n, dtype=bool)
    taken[start] = True
    for i in range(1, m):
        last = coords[picked[i - 1]]
        dist = np.sum((coords - last) ** 2, axis=1)
        np.minimum(min_dist, dist, out=min_dist)
        candidate = np.where(taken, -np.inf, min_dist)
        picked[i] = int(np.argmax(candidate))
        taken[picked[i]] = True
    return picked


def knn_query(cloud, centers, k):
    """k nearest points per center, ascending by distance, ties by smaller index."""
    coords = _coords(cloud)
    n = coords.shape[0]
    centers = np.asarray(centers, dtype=np.int64).reshape(-1)
    if k < 1 or k > n:
        raise SizeError(f"k={k} is out of range for {n} points")

    d2 = squared_distances(coords, coords[centers])
    order = np.argsort(d2, axis=1, kind='stable')[:, :k]
    return NeighborhoodIndex(
        centers=centers,
        neighbors=order,
        valid_counts=np.full(centers.shape[0], k, dtype=np.int64),
    )


def ball_query(cloud, centers, radius, k_max):
    """
    Up to k_max points within radius of each center, in index scan order.

    A row that finds nothing keeps the nearest point, so valid_counts >= 1.
    Padded slots repeat the first valid neighbor.
    """
    if radius <= 0:
        raise SizeError("ball query radius must be positive")
    if k_max < 1:
        raise SizeError("k_max must be at least 1")
    coords = _coords(cloud)
    centers = np.asarray(centers, dtype=np.int64).reshape(-1)

    d2 = squared_distances(coords, coords[centers])
    inside = d2 <= radius * radius
    neighbors = np.empty((centers.shape[0], k_max), dtype=np.int64)
    valid = np.empty(centers.shape[0], dtype=np.int64)
    for row in range(centers.shape[0]):
        found = np.flatnonzero(inside[row])[:k_max]
        if found.size == 0:
            found = np.array([int(np.argmin(d2[row]))])
        neighbors[row, :found.size] = found
        neighbors[row, found.size:] = found[0]
        valid[row] = found.size
    return NeighborhoodIndex(centers=centers, neighbors=neighbors, valid_counts=valid)


def relative_offsets(cloud, nbr):
    """Center-relative coordinates p_ij - p_i, shape M x k x 3."""
    coords = _coords(cloud)
    nbr.check_against(coords.shape[0])
    return coords[nbr.neighbors] - coords[nbr.centers][:, None, :]


def group(cloud, m, k, method='knn', radius=None, start=0):
    """Sample m centers by FPS and build their neighborhoods."""
    coords = _coords(cloud)
    centers = farthest_point_sample(coords, m, start=start)
    if method == 'knn':
        nbr = knn_query(coords, centers, min(k, coords.shape[0]))
    elif method == 'ball':
        nbr = ball_query(coords, centers, radius, k)
    else:
        raise ConfigError(f"unknown neighborhood method '{method}'")
    return nbr, relative_offsets(coords, nbr)
