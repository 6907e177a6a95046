"""Adaptive grid ground removal and curb detection.

The road is split into longitudinal slabs along the map centerline. Each
slab gets an iteratively-refit plane seeded from its inner neighbor; the
slab nearest the vehicle is seeded with a flat plane at -h_lidar. Residual
thresholds tighten toward the vehicle so small nearby objects survive as
obstacles. Low obstacle points hugging the right road boundary feed a
robust quadratic curb fit, which then reclassifies those candidates as
on-road obstacles or off-road ground.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .hdmap import HdMap, PolylineFrame

# Fitted road planes steeper than this slope are rejected as degenerate.
MAX_PLANE_SLOPE = 0.3
# Curb candidates must lie within this lateral distance of the right boundary.
CURB_LATERAL_BAND = 1.5
# Robust curb fit: IRLS iteration cap and Tukey cutoff as a multiple of MAD.
CURB_IRLS_ITERS = 10
TUKEY_MAD_SCALE = 4.685


@dataclass
class GroundConfig:
    """Tunables for ground estimation and curb fitting.

    ``t_near``/``t_far`` define a linear residual-threshold schedule from
    the nearest to the farthest grid. ``curb_k`` points per ``curb_period``
    meters of road are kept for the curb fit.
    """

    h_lidar: float = 2.0
    h_curb: float = 0.3
    t_near: float = 0.08
    t_far: float = 0.20
    n_max: int = 10
    eps_conv: float = 1e-4
    grid_length: float = 10.0
    curb_k: int = 5
    curb_period: float = 2.0

    def __post_init__(self):
        if self.h_lidar <= 0:
            raise ValueError("h_lidar must be positive")
        if not 0.05 < self.h_curb < 0.5:
            raise ValueError("h_curb must be in (0.05, 0.5)")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.eps_conv <= 0:
            raise ValueError("eps_conv must be positive")
        if self.curb_k < 3:
            raise ValueError("curb_k must be >= 3")
        if self.grid_length <= 0 or self.curb_period <= 0:
            raise ValueError("grid_length and curb_period must be positive")
        if not 0 < self.t_near <= self.t_far:
            raise ValueError("need 0 < t_near <= t_far")

    def thresholds(self, m: int) -> np.ndarray:
        """Residual thresholds for ``m`` grids, non-decreasing with index."""
        if m <= 1:
            return np.full(max(m, 0), self.t_near)
        return self.t_near + (self.t_far - self.t_near) * np.arange(m) / (m - 1)


@dataclass(frozen=True)
class PlaneModel:
    """First-order ground plane z = a*x + b*y + c (meters)."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.a, self.b, self.c])):
            raise ValueError("plane coefficients must be finite")

    def height(self, x, y):
        return self.a * np.asarray(x) + self.b * np.asarray(y) + self.c

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])


@dataclass
class GroundGrid:
    """One longitudinal slab: station interval relative to the vehicle."""

    index: int
    s_lo: float
    s_hi: float
    threshold: float
    point_indices: np.ndarray

    @property
    def center(self) -> float:
        return 0.5 * (self.s_lo + self.s_hi)


@dataclass(frozen=True)
class CurbModel:
    """Right-curb contour y = p2*x^2 + p1*x + p0, valid on [x_lo, x_hi]."""

    p2: float
    p1: float
    p0: float
    x_lo: float
    x_hi: float

    def y_at(self, x):
        """Evaluate the contour; x is clamped into the validity range."""
        xc = np.clip(np.asarray(x, dtype=float), self.x_lo, self.x_hi)
        return (self.p2 * xc + self.p1) * xc + self.p0


class GroundModelSet:
    """Per-grid plane models plus the station frame used to build them."""

    def __init__(self, grids: list[GroundGrid], models: list[PlaneModel],
                 frame: PolylineFrame, station0: float):
        if len(grids) != len(models):
            raise ValueError("one model per grid required")
        self.grids = grids
        self.models = models
        self.frame = frame
        self.station0 = station0
        # Grids sorted by their inner edge for station -> grid lookup.
        order = sorted(range(len(grids)), key=lambda i: grids[i].s_lo)
        self._lo = np.array([grids[i].s_lo for i in order])
        self._hi = np.array([grids[i].s_hi for i in order])
        self._order = np.array(order, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.grids)

    def grid_of(self, xy: np.ndarray) -> np.ndarray:
        """Grid ordinal per point; points outside clamp to the nearest grid."""
        if len(self.grids) == 0:
            raise ValueError("empty ground model set")
        s, _, _ = self.frame.project(np.asarray(xy, dtype=float))
        u = s - self.station0
        pos = np.searchsorted(self._lo, u, side="right") - 1
        pos = np.clip(pos, 0, len(self._lo) - 1)
        return self._order[pos]

    def height_at(self, xy: np.ndarray) -> np.ndarray:
        """Ground elevation under each (x, y) via that point's grid plane."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        gid = self.grid_of(xy)
        out = np.empty(len(xy))
        for g in np.unique(gid):
            m = gid == g
            out[m] = self.models[g].height(xy[m, 0], xy[m, 1])
        return out


def partition_grids(cloud: PointCloud, hdmap: HdMap,
                    grid_length: float) -> list[GroundGrid]:
    """Partition points into longitudinal slabs ordered by vehicle distance.

    Slab edges sit at multiples of ``grid_length`` of the station relative
    to the vehicle's centerline projection, so every point lands in exactly
    one slab. Thresholds are assigned later from the schedule.
    """
    if grid_length <= 0:
        raise ValueError("grid_length must be positive")
    if len(cloud) == 0:
        return []
    frame = PolylineFrame(hdmap.centerline)
    s0 = frame.project(np.zeros((1, 2)))[0][0]
    s, _, _ = frame.project(cloud.xyz[:, :2])
    u = s - s0
    k = np.floor(u / grid_length).astype(np.int64)
    uniq = np.unique(k)

    def edge_distance(ki: int) -> float:
        lo, hi = ki * grid_length, (ki + 1) * grid_length
        return 0.0 if lo <= 0.0 <= hi else min(abs(lo), abs(hi))

    ordered = sorted(uniq, key=lambda ki: (edge_distance(int(ki)), int(ki)))
    grids = []
    for m, ki in enumerate(ordered, start=1):
        idx = np.flatnonzero(k == ki)
        grids.append(GroundGrid(index=m, s_lo=ki * grid_length,
                                s_hi=(ki + 1) * grid_length,
                                threshold=0.0, point_indices=idx))
    return grids


def fit_ground_plane(points: np.ndarray, init: PlaneModel, threshold: float,
                     n_max: int, eps_conv: float):
    """Iteratively refit a plane to its residual inliers.

    Starting from ``init``, points within ``threshold`` of the current plane
    are refit by least squares until the coefficient vector moves less than
    ``eps_conv`` or ``n_max`` iterations pass. Returns ``(model, inlier_mask,
    iterations)``. A grid that ever drops below 3 inliers (or yields a rank
    deficient or implausibly steep fit) is degenerate: the initial model is
    returned with every point flagged as obstacle.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    none = np.zeros(len(pts), dtype=bool)
    design_all = np.column_stack([pts[:, 0], pts[:, 1], np.ones(len(pts))])
    coef = init.as_array()
    iters = 0
    for iters in range(1, n_max + 1):
        res = pts[:, 2] - design_all @ coef
        inl = np.abs(res) <= threshold
        if inl.sum() < 3:
            return init, none, iters
        design = design_all[inl]
        gram = design.T @ design
        # Normal equations; a near-singular Gram matrix means the inliers
        # are (close to) collinear and cannot pin down a plane.
        if np.linalg.cond(gram) > 1e12:
            return init, none, iters
        new = np.linalg.solve(gram, design.T @ pts[inl, 2])
        if not np.all(np.isfinite(new)):
            return init, none, iters
        if max(abs(new[0]), abs(new[1])) > MAX_PLANE_SLOPE:
            return init, none, iters
        delta = float(np.linalg.norm(new - coef))
        coef = new
        if delta < eps_conv:
            break
    model = PlaneModel(*coef)
    res = pts[:, 2] - design_all @ coef
    return model, np.abs(res) <= threshold, iters


def run_ground_removal(cloud: PointCloud, hdmap: HdMap, cfg: GroundConfig):
    """Flag obstacle points and estimate one ground plane per grid.

    Grid 1 is seeded with the flat plane at -h_lidar; each following grid is
    seeded with its predecessor's model. Returns ``(flags, model_set)`` with
    ``flags[i]`` True for obstacle points.
    """
    grids = partition_grids(cloud, hdmap, cfg.grid_length)
    frame = PolylineFrame(hdmap.centerline)
    s0 = frame.project(np.zeros((1, 2)))[0][0]
    flags = np.zeros(len(cloud), dtype=bool)
    models: list[PlaneModel] = []
    schedule = cfg.thresholds(len(grids))
    prev = PlaneModel(0.0, 0.0, -cfg.h_lidar)
    for grid, t in zip(grids, schedule):
        grid.threshold = float(t)
        idx = grid.point_indices
        if len(idx) == 0:
            models.append(prev)
            continue
        model, inliers, _ = fit_ground_plane(cloud.xyz[idx], prev,
                                             grid.threshold, cfg.n_max,
                                             cfg.eps_conv)
        flags[idx] = ~inliers
        models.append(model)
        prev = model
    return flags, GroundModelSet(grids, models, frame, s0)


def select_curb_candidates(cloud: PointCloud, flags: np.ndarray,
                           fset: GroundModelSet, hdmap: HdMap,
                           cfg: GroundConfig) -> np.ndarray:
    """Indices of obstacle points that look like right-curb structure.

    Candidates are obstacle points at most ``h_curb`` above their grid's
    plane, within the lateral band of the right boundary, and in a grid
    whose station span overlaps the boundary's coverage.
    """
    cand = np.flatnonzero(flags)
    if len(cand) == 0 or len(fset) == 0:
        return np.zeros(0, dtype=np.int64)
    xy = cloud.xyz[cand, :2]
    height = cloud.xyz[cand, 2] - fset.height_at(xy)
    keep = (height > 0.0) & (height < cfg.h_curb)
    cand, xy = cand[keep], xy[keep]
    if len(cand) == 0:
        return cand
    # Grids must cover the right boundary's station range.
    bs, _, _ = fset.frame.project(hdmap.right_boundary)
    b_lo, b_hi = bs.min() - fset.station0, bs.max() - fset.station0
    gid = fset.grid_of(xy)
    overlaps = np.array([g.s_hi > b_lo and g.s_lo < b_hi for g in fset.grids])
    keep = overlaps[gid]
    cand, xy = cand[keep], xy[keep]
    if len(cand) == 0:
        return cand
    _, _, dist = PolylineFrame(hdmap.right_boundary).project(xy)
    return cand[dist <= CURB_LATERAL_BAND]


def _tukey_weights(residuals: np.ndarray) -> np.ndarray | None:
    mad = np.median(np.abs(residuals - np.median(residuals)))
    cutoff = TUKEY_MAD_SCALE * mad
    if cutoff < 1e-12:
        return None  # residuals already collapsed; fit has converged
    r = residuals / cutoff
    w = np.square(1.0 - np.square(np.clip(np.abs(r), 0.0, 1.0)))
    return w


def fit_curb(candidates: np.ndarray, cfg: GroundConfig) -> CurbModel | None:
    """Robust quadratic fit of the curb contour from candidate points.

    Per ``curb_period`` meters of x, the ``curb_k`` points nearest the road
    center (smallest |y|) are kept; the quadratic is fit by iteratively
    reweighted least squares with a Tukey biweight. Returns None when the
    candidates cannot support a quadratic (too few points or periods).
    """
    xy = np.asarray(candidates, dtype=float).reshape(-1, 2)
    if len(xy) < 3 * cfg.curb_k:
        return None
    x, y = xy[:, 0], xy[:, 1]
    bins = np.floor((x - x.min()) / cfg.curb_period).astype(np.int64)
    if len(np.unique(bins)) < 3:
        return None
    # Keep the curb_k innermost points of each period.
    order = np.lexsort((np.arange(len(xy)), np.abs(y), bins))
    sorted_bins = bins[order]
    starts = np.searchsorted(sorted_bins, np.unique(sorted_bins))
    rank = np.arange(len(xy)) - np.repeat(starts, np.diff(
        np.append(starts, len(xy))))
    sel = order[rank < cfg.curb_k]
    xs, ys = x[sel], y[sel]

    design = np.column_stack([xs * xs, xs, np.ones(len(xs))])
    coef, _, rank_, _ = np.linalg.lstsq(design, ys, rcond=None)
    if rank_ < 3:
        return None
    for _ in range(CURB_IRLS_ITERS):
        res = ys - design @ coef
        w = _tukey_weights(res)
        if w is None:
            break
        if np.count_nonzero(w) < 3:
            break
        wd = design * w[:, None]
        try:
            new = np.linalg.solve(wd.T @ design, wd.T @ ys)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(new)):
            break
        shift = float(np.linalg.norm(new - coef))
        coef = new
        if shift < 1e-10:
            break
    return CurbModel(float(coef[0]), float(coef[1]), float(coef[2]),
                     float(xs.min()), float(xs.max()))


def refine_obstacle_flags(cloud: PointCloud, flags: np.ndarray,
                          candidates: np.ndarray,
                          curb: CurbModel) -> np.ndarray:
    """Reclassify curb candidates against the fitted curb contour.

    Candidates on the road side (|y| <= |curb(x)|, boundary-exact points
    counted as on-road) stay obstacles; candidates beyond the curb are
    returned to ground. All other flags are untouched.
    """
    out = flags.copy()
    if len(candidates) == 0:
        return out
    x = cloud.xyz[candidates, 0]
    y = cloud.xyz[candidates, 1]
    on_road = np.abs(y) <= np.abs(curb.y_at(x))
    out[candidates] = on_road
    return out
