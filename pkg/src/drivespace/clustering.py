"""Adaptive DBSCAN driven by the LiDAR scanning pattern.

The neighborhood radius and core-point threshold vary with a point's
horizontal range s so that a minimum-size object keeps a constant expected
return count while sparse precipitation clutter never reaches core density:

    N_pl    = floor(w_min / voxel)
    eps(s)  = max(w_min, N_pl * d_phi * s)
    N_s(s)  = max(1, floor(h_min / max(s * d_alpha, voxel)))
    minPts(s) = N_s(s) * N_pl

Each point is tested for core status with its own eps/minPts; cluster
expansion then follows classic DBSCAN reachability, which reduces exactly
to the classic algorithm when the parameters are constant over the data.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

NOISE = -1

# Tolerance inside floor() so exact ratios like 0.3 / 0.1 do not truncate.
_FLOOR_EPS = 1e-9


def _floor(x):
    return np.floor(np.asarray(x, dtype=float) + _FLOOR_EPS)


@dataclass(frozen=True)
class ScanPattern:
    """LiDAR angular resolutions, voxel size, and minimum object extents."""

    d_phi: float        # horizontal resolution, rad
    d_alpha: float      # vertical resolution, rad
    voxel: float        # downsampling voxel edge, m
    w_min: float        # minimum object width, m
    h_min: float        # minimum object height, m

    def __post_init__(self):
        vals = [self.d_phi, self.d_alpha, self.voxel, self.w_min, self.h_min]
        if any(v <= 0 for v in vals):
            raise ValueError("scan pattern values must be positive")
        if self.d_phi >= 0.1 or self.d_alpha >= 0.1:
            raise ValueError("angular resolutions must be below 0.1 rad")


def points_per_line(s: float, pattern: ScanPattern) -> int:
    """Returns per scan line on a minimum-width object (constant in s)."""
    if s < 0:
        raise ValueError("range must be non-negative")
    n = int(_floor(pattern.w_min / pattern.voxel))
    if n < 1:
        raise ValueError("minimum object width is thinner than the voxel size")
    return n


def eps_at(s: float, pattern: ScanPattern) -> float:
    """Clustering radius at horizontal range s; never below w_min."""
    if s < 0:
        raise ValueError("range must be non-negative")
    n_pl = points_per_line(s, pattern)
    return max(pattern.w_min, n_pl * pattern.d_phi * s)


def min_pts_at(s: float, pattern: ScanPattern) -> int:
    """Core-point threshold at horizontal range s (self-inclusive count)."""
    if s < 0:
        raise ValueError("range must be non-negative")
    n_pl = points_per_line(s, pattern)
    spacing = max(s * pattern.d_alpha, pattern.voxel)
    n_s = max(1, int(_floor(pattern.h_min / spacing)))
    return n_s * n_pl


def _eps_many(s: np.ndarray, pattern: ScanPattern) -> np.ndarray:
    n_pl = points_per_line(0.0, pattern)
    return np.maximum(pattern.w_min, n_pl * pattern.d_phi * s)


def _min_pts_many(s: np.ndarray, pattern: ScanPattern) -> np.ndarray:
    n_pl = points_per_line(0.0, pattern)
    spacing = np.maximum(s * pattern.d_alpha, pattern.voxel)
    n_s = np.maximum(1, _floor(pattern.h_min / spacing)).astype(np.int64)
    return n_s * n_pl


@dataclass
class Cluster:
    """One obstacle cluster with cached geometry."""

    label: int
    indices: np.ndarray
    points: np.ndarray
    centroid: np.ndarray
    min_bound: np.ndarray
    max_bound: np.ndarray


@dataclass
class ClusterSet:
    """Per-point labels (NOISE = -1) plus per-cluster summaries."""

    labels: np.ndarray
    clusters: list

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @classmethod
    def from_labels(cls, xyz: np.ndarray, labels: np.ndarray) -> "ClusterSet":
        xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
        labels = np.asarray(labels, dtype=np.int64)
        clusters = []
        for lab in np.unique(labels[labels >= 0]):
            idx = np.flatnonzero(labels == lab)
            pts = xyz[idx]
            clusters.append(Cluster(int(lab), idx, pts, pts.mean(axis=0),
                                    pts.min(axis=0), pts.max(axis=0)))
        return cls(labels, clusters)

    def __len__(self) -> int:
        return len(self.clusters)


def _directed_neighbors(xyz: np.ndarray, eps: np.ndarray):
    """All pairs (i, j) with |p_i - p_j| <= eps_i, via a uniform cell grid.

    The grid cell edge equals the largest radius in the frame so every
    neighborhood is contained in the 3x3x3 cell block around a point.
    Returns (src, dst, counts) where counts[i] includes the point itself.
    """
    n = len(xyz)
    cell = float(eps.max())
    # One-cell padding keeps every 3x3x3 neighborhood inside the index
    # volume, so no per-offset bound checks are needed.
    cells = np.floor(xyz / cell).astype(np.int64)
    cells -= cells.min(axis=0) - 1
    dims = cells.max(axis=0) + 2
    strides = np.array([dims[1] * dims[2], dims[2], 1], dtype=np.int64)
    lin = cells @ strides
    order = np.argsort(lin, kind="stable")
    n_cells = int(np.prod(dims))
    if n_cells > 32 * n + 1024:
        pos_start, reps, src0 = _runs_by_search(lin, order, strides)
    else:
        # The z stride is 1, so each (x, y) offset's three z-neighbor cells
        # are one contiguous run of the sorted order; a dense prefix-sum
        # occupancy table yields every run with two gathers.
        occupancy = np.bincount(lin, minlength=n_cells)
        cum = np.concatenate([[0], np.cumsum(occupancy)])
        off9 = np.array([dx * strides[0] + dy * strides[1]
                         for dx in (-1, 0, 1) for dy in (-1, 0, 1)])
        target = (lin[None, :] + off9[:, None]).ravel()
        pos_start = cum[target - 1]
        reps = cum[target + 2] - pos_start
        src0 = np.tile(np.arange(n, dtype=np.int64), len(off9))
    src = np.repeat(src0, reps)
    # Expand the [start, start+count) runs into one flat index list.
    total = int(reps.sum())
    flat = np.repeat(pos_start - (np.cumsum(reps) - reps), reps) \
        + np.arange(total)
    xyz_sorted = xyz[order]
    diff = xyz[src] - xyz_sorted[flat]   # run-local gathers stay cache-warm
    d2 = np.einsum("ij,ij->i", diff, diff)
    keep = d2 <= np.square(eps[src])
    src, dst = src[keep], order[flat[keep]]
    return src, dst, np.bincount(src, minlength=n)


def _runs_by_search(lin, order, strides):
    """Sparse fallback for degenerate extents: binary-search cell runs."""
    n = len(lin)
    sorted_lin = lin[order]
    off9 = np.array([dx * strides[0] + dy * strides[1]
                     for dx in (-1, 0, 1) for dy in (-1, 0, 1)])
    target = (lin[None, :] + off9[:, None]).ravel()
    pos_start = np.searchsorted(sorted_lin, target - 1, side="left")
    pos_end = np.searchsorted(sorted_lin, target + 1, side="right")
    reps = pos_end - pos_start
    src0 = np.tile(np.arange(n, dtype=np.int64), len(off9))
    return pos_start, reps, src0


def adaptive_dbscan(points: np.ndarray, pattern: ScanPattern) -> ClusterSet:
    """Cluster obstacle points with range-adaptive eps and minPts.

    A point is a core point when its own-eps neighborhood (itself included)
    reaches its own minPts; clusters grow from cores through neighborhood
    reachability exactly as in classic DBSCAN, with seeds visited in input
    order so identical inputs give identical labels.
    """
    xyz = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(xyz)
    if n == 0:
        return ClusterSet(np.zeros(0, np.int64), [])
    s = np.hypot(xyz[:, 0], xyz[:, 1])
    eps = _eps_many(s, pattern)
    min_pts = _min_pts_many(s, pattern)
    src, dst, counts = _directed_neighbors(xyz, eps)
    core = counts >= min_pts

    # CSR adjacency over the directed neighbor relation.
    order = np.argsort(src, kind="stable")
    dst_sorted = dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])

    labels = np.full(n, NOISE, dtype=np.int64)
    next_label = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != NOISE:
            continue
        labels[seed] = next_label
        queue = deque([seed])
        while queue:
            q = queue.popleft()
            nb = dst_sorted[indptr[q]:indptr[q + 1]]
            fresh = nb[labels[nb] == NOISE]
            if len(fresh) == 0:
                continue
            labels[fresh] = next_label
            queue.extend(fresh[core[fresh]].tolist())
        next_label += 1
    return ClusterSet.from_labels(xyz, labels)


def drop_ground_residual(clusters: ClusterSet, height_above_ground: np.ndarray,
                         min_height: float = 0.05) -> ClusterSet:
    """Relabel clusters that never rise above ``min_height`` as noise.

    Catches residual ground patches that leaked through plane fitting;
    ``height_above_ground`` is per point, aligned with the clustered array.
    """
    h = np.asarray(height_above_ground, dtype=float)
    labels = clusters.labels.copy()
    kept = []
    for c in clusters.clusters:
        if h[c.indices].max() < min_height:
            labels[c.indices] = NOISE
        else:
            kept.append(c)
    # Renumber surviving clusters to keep labels dense.
    out = []
    for i, c in enumerate(kept):
        labels[c.indices] = i
        out.append(Cluster(i, c.indices, c.points, c.centroid,
                           c.min_bound, c.max_bound))
    return ClusterSet(labels, out)
