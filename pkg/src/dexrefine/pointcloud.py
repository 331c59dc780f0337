"""Oriented point clouds, exact nearest-neighbour queries and normals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

NORMAL_TOL = 1e-6
DEFAULT_K_NEIGHBORS = 16


@dataclass(frozen=True, eq=False)
class OrientedPointCloud:
    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        p = np.array(self.points, dtype=float).reshape(-1, 3)
        n = np.array(self.normals, dtype=float).reshape(-1, 3)
        if p.shape[0] == 0:
            raise ValueError("point cloud is empty")
        if n.shape != p.shape:
            raise ValueError(f"normals shape {n.shape} does not match points shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("point cloud has non-finite coordinates")
        bad = np.abs(np.linalg.norm(n, axis=1) - 1.0) > NORMAL_TOL
        if np.any(bad):
            raise ValueError(f"{int(bad.sum())} normals are not unit length (first at row {int(np.argmax(bad))})")
        p.flags.writeable = False
        n.flags.writeable = False
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", n)

    def __len__(self) -> int:
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


class NeighborIndex:
    """KD-tree over a cloud. Queries are exact, ties go to the lowest index."""

    def __init__(self, cloud: OrientedPointCloud):
        if len(cloud) == 0:
            raise ValueError("cannot index an empty cloud")
        self.cloud = cloud
        self._tree = cKDTree(cloud.points, balanced_tree=True, compact_nodes=True)

    def nearest_many(self, x) -> np.ndarray:
        """Index of the nearest stored point for each row of ``x``."""
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        pts = self.cloud.points
        dist, idx = self._tree.query(x, k=1)
        out = np.empty(len(x), dtype=int)
        for row in range(len(x)):
            # The tree may return any member of a tie; rescan the shell around the hit.
            r = dist[row] * (1.0 + 1e-9) + 1e-12
            cand = np.array(sorted(self._tree.query_ball_point(x[row], r)), dtype=int)
            if cand.size == 0:
                out[row] = idx[row]
                continue
            d2 = ((pts[cand] - x[row]) ** 2).sum(axis=1)
            out[row] = cand[int(np.argmin(d2))]
        return out


def build_index(cloud: OrientedPointCloud) -> NeighborIndex:
    return NeighborIndex(cloud)


def nearest(index: NeighborIndex, x) -> tuple[np.ndarray, np.ndarray, int]:
    """Closest stored point, its normal and its index."""
    i = int(index.nearest_many(np.asarray(x, dtype=float).reshape(1, 3))[0])
    return index.cloud.points[i].copy(), index.cloud.normals[i].copy(), i


def estimate_normals(points, k_neighbors: int = DEFAULT_K_NEIGHBORS, orient_ref=None):
    """PCA normals from the ``k_neighbors`` nearest points (the point itself included).

    Each normal is flipped so that ``n · (p - orient_ref) >= 0``; the
    reference defaults to the centroid, which makes normals of a closed
    convex-ish surface point outward.

    Returns:
        normals: (N, 3) unit vectors.
        degenerate: (N,) bool, True where the neighbourhood has rank < 2
            (collinear or coincident points); those normals are arbitrary.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = pts.shape[0]
    if k_neighbors < 3:
        raise ValueError("k_neighbors must be at least 3")
    if n < k_neighbors:
        raise ValueError(f"need at least k_neighbors={k_neighbors} points, got {n}")
    ref = pts.mean(axis=0) if orient_ref is None else np.asarray(orient_ref, dtype=float).reshape(3)

    _, nbr = cKDTree(pts).query(pts, k=k_neighbors)
    nbr = np.asarray(nbr).reshape(n, k_neighbors)
    local = pts[nbr] - pts[nbr].mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local) / k_neighbors
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    degenerate = evals[:, 1] <= 1e-12 * scale
    degenerate |= evals[:, 2] <= 1e-300
    flip = np.einsum("ni,ni->n", normals, pts - ref) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return normals, degenerate


def signed_distance(x_obj, p, n) -> float:
    """Point-to-plane distance ``n·(x - p)``; positive on the normal side."""
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > NORMAL_TOL:
        raise ValueError("normal must be unit length")
    return float(n @ (np.asarray(x_obj, dtype=float) - np.asarray(p, dtype=float)))
