"""Occupancy-grid drivable space: build, expand, and extract the corridor.

The lawful drivable band runs from the right curb (fitted contour when
available, map boundary otherwise) to the map centerline; everything
outside it is occupied, as is every obstacle footprint. Footprints are then
dilated by class- and ego-dependent safety margins, pedestrians on
crosswalks block the full road width, and the final corridor is traced by
chaining per-station free segments outward from the ego cell.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .ground import CurbModel
from .hdmap import HdMap, PolylineFrame, polygon_contains
from .transforms import RigidTransform


class RoadContext(enum.Enum):
    EGO_LANE = "EGO_LANE"
    OPPOSING_LANE = "OPPOSING_LANE"
    SIDEWALK = "SIDEWALK"
    CROSSWALK = "CROSSWALK"
    OFF_ROAD = "OFF_ROAD"


@dataclass(frozen=True)
class EgoState:
    """Ego geometry and dynamics used for the safety envelope."""

    width: float = 2.0
    velocity: float = 0.0
    decel: float = 2.5
    pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if self.width <= 0 or self.decel <= 0 or self.velocity < 0:
            raise ValueError("need width > 0, decel > 0, velocity >= 0")

    @property
    def braking_distance(self) -> float:
        return self.velocity**2 / (2.0 * self.decel)


@dataclass(frozen=True)
class ClassRule:
    """Base lateral clearance for one object class."""

    label: str
    clearance: float
    vulnerable: bool = False

    def __post_init__(self):
        if self.clearance < 0:
            raise ValueError("clearance must be non-negative")


def default_rules() -> dict:
    rules = [ClassRule("car", 0.5), ClassRule("pedestrian", 1.0, True),
             ClassRule("cyclist", 1.0, True), ClassRule("cone", 0.3),
             ClassRule("UNKNOWN", 1.0, True)]
    return {r.label: r for r in rules}


def rule_for(label: str, rules: dict) -> ClassRule:
    """Unknown classes fall back to the conservative UNKNOWN rule."""
    return rules.get(label, rules["UNKNOWN"])


@dataclass
class OccupancyGrid:
    """Binary occupancy raster; index [i, j] covers station i, lateral j."""

    x0: float
    y0: float
    resolution: float
    occupied: np.ndarray

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.occupied = np.asarray(self.occupied, dtype=bool)

    @property
    def nx(self) -> int:
        return self.occupied.shape[0]

    @property
    def ny(self) -> int:
        return self.occupied.shape[1]

    def x_centers(self) -> np.ndarray:
        return self.x0 + (np.arange(self.nx) + 0.5) * self.resolution

    def y_centers(self) -> np.ndarray:
        return self.y0 + (np.arange(self.ny) + 0.5) * self.resolution

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.x0, self.y0, self.resolution,
                             self.occupied.copy())

    def same_frame(self, other: "OccupancyGrid") -> bool:
        return (self.occupied.shape == other.occupied.shape
                and np.isclose(self.x0, other.x0)
                and np.isclose(self.y0, other.y0)
                and np.isclose(self.resolution, other.resolution))

    def index_of(self, x: float, y: float):
        i = int(np.floor((x - self.x0) / self.resolution))
        j = int(np.floor((y - self.y0) / self.resolution))
        return i, j

    def contains_index(self, i: int, j: int) -> bool:
        return 0 <= i < self.nx and 0 <= j < self.ny


@dataclass
class DrivableSpace:
    """Corridor boundaries per station, plus the grid frame they live on."""

    stations: np.ndarray
    left: np.ndarray
    right: np.ndarray
    x0: float = 0.0
    y0: float = 0.0
    resolution: float = 0.1
    shape: tuple = (0, 0)

    def __post_init__(self):
        self.stations = np.asarray(self.stations, dtype=float)
        self.left = np.asarray(self.left, dtype=float)
        self.right = np.asarray(self.right, dtype=float)
        if not (len(self.stations) == len(self.left) == len(self.right)):
            raise ValueError("boundary arrays must share length")
        if np.any(self.left <= self.right):
            raise ValueError("left boundary must stay left of the right one")

    @property
    def is_empty(self) -> bool:
        return len(self.stations) == 0

    def to_free_mask(self) -> np.ndarray:
        """Rasterize the corridor on its own grid frame."""
        mask = np.zeros(self.shape, dtype=bool)
        res = self.resolution
        for s, lt, rt in zip(self.stations, self.left, self.right):
            i = int(np.floor((s - self.x0) / res))
            if not 0 <= i < self.shape[0]:
                continue
            j_lo = int(np.round((rt - self.y0) / res))
            j_hi = int(np.round((lt - self.y0) / res))
            mask[i, max(j_lo, 0):min(j_hi, self.shape[1])] = True
        return mask


def classify_road_context(objects: list, hdmap: HdMap,
                          ego_lateral: float = -1e-6) -> list:
    """Tag each object by where its centroid sits on the map.

    Priority: crosswalk, then sidewalk, then the lane split about the
    centerline (ego side decided by the sign of ``ego_lateral``, defaulting
    to right-hand traffic), then off-road.
    """
    frame = PolylineFrame(hdmap.centerline)
    lat_left = frame.lateral_profile(hdmap.left_boundary)
    lat_right = frame.lateral_profile(hdmap.right_boundary)
    ego_side = -1.0 if ego_lateral <= 0 else 1.0
    out = []
    for obj in objects:
        pos = np.asarray(obj.position, dtype=float).reshape(1, 2)
        if any(polygon_contains(pos, poly)[0] for poly in hdmap.crosswalks):
            out.append(RoadContext.CROSSWALK)
            continue
        if any(polygon_contains(pos, poly)[0]
               for poly in hdmap.sidewalk_regions):
            out.append(RoadContext.SIDEWALK)
            continue
        s, lat, _ = frame.project(pos)
        if lat_right(s[0]) <= lat[0] <= lat_left(s[0]):
            same_side = np.sign(lat[0]) in (0.0, ego_side)
            out.append(RoadContext.EGO_LANE if same_side
                       else RoadContext.OPPOSING_LANE)
        else:
            out.append(RoadContext.OFF_ROAD)
    return out


def _hull_vertices(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 3:
        return pts
    try:
        hull = ConvexHull(pts)
        return pts[hull.vertices]
    except QhullError:
        return pts  # collinear cluster; the corner padding restores area


def _rasterize_polygon(grid: OccupancyGrid, poly: np.ndarray):
    """Mark cells whose square intersects the convex polygon.

    Implemented as cell-center containment in the polygon dilated by half a
    cell (Minkowski sum with the cell square), which is exact for convex
    polygons.
    """
    if len(poly) == 0:
        return
    res = grid.resolution
    h = res / 2.0
    corners = np.array([[-h, -h], [-h, h], [h, -h], [h, h]])
    padded = (poly[:, None, :] + corners[None, :, :]).reshape(-1, 2)
    verts = _hull_vertices(padded)
    if len(verts) < 3:
        return
    xc, yc = grid.x_centers(), grid.y_centers()
    i_lo = max(0, int(np.floor((verts[:, 0].min() - grid.x0) / res)))
    i_hi = min(grid.nx, int(np.ceil((verts[:, 0].max() - grid.x0) / res)))
    j_lo = max(0, int(np.floor((verts[:, 1].min() - grid.y0) / res)))
    j_hi = min(grid.ny, int(np.ceil((verts[:, 1].max() - grid.y0) / res)))
    if i_lo >= i_hi or j_lo >= j_hi:
        return
    xx, yy = np.meshgrid(xc[i_lo:i_hi], yc[j_lo:j_hi], indexing="ij")
    centers = np.column_stack([xx.ravel(), yy.ravel()])
    inside = polygon_contains(centers, verts).reshape(xx.shape)
    grid.occupied[i_lo:i_hi, j_lo:j_hi] |= inside


def grid_spec_from_map(hdmap: HdMap, resolution: float = 0.1,
                       x_max: float = 60.0, y_margin: float = 1.0):
    """Deterministic grid frame shared by the pipeline and its oracle."""
    y_lo = hdmap.right_boundary[:, 1].min() - y_margin
    y_hi = hdmap.left_boundary[:, 1].max() + y_margin
    nx = int(np.ceil(x_max / resolution))
    ny = int(np.ceil((y_hi - y_lo) / resolution))
    return 0.0, float(y_lo), nx, ny


def build_occupancy(objects: list, curb: CurbModel | None, lane_points,
                    hdmap: HdMap, resolution: float = 0.1,
                    x_max: float = 60.0, y_margin: float = 1.0,
                    footprints: list | None = None) -> OccupancyGrid:
    """Occupancy from obstacle footprints, the curb, and the map.

    Cells left of the lawful left limit (the centerline, optionally
    tightened by detected lane markers), right of the curb contour or right
    boundary, or outside the mapped station range are occupied, as is the
    convex footprint of every obstacle cluster. ``footprints`` may override
    the per-object polygons (used by the perfect-perception oracle).
    """
    if not 0.05 <= resolution <= 0.5:
        raise ValueError("resolution must lie in [0.05, 0.5] m")
    x0, y0, nx, ny = grid_spec_from_map(hdmap, resolution, x_max, y_margin)
    grid = OccupancyGrid(x0, y0, resolution, np.zeros((nx, ny), dtype=bool))

    frame = PolylineFrame(hdmap.centerline)
    lat_right = frame.lateral_profile(hdmap.right_boundary)
    xx, yy = np.meshgrid(grid.x_centers(), grid.y_centers(), indexing="ij")
    centers = np.column_stack([xx.ravel(), yy.ravel()])
    s, lat, _ = frame.project(centers)
    s0 = frame.project(np.zeros((1, 2)))[0][0]

    left_limit = _lawful_left_limit(lane_points, s - s0)
    off = lat > left_limit                       # beyond the centerline
    off |= lat < lat_right(s)                    # beyond the mapped right edge
    off |= (s <= 1e-9) | (s >= frame.length - 1e-9)   # outside map coverage
    grid.occupied |= off.reshape(xx.shape)

    if curb is not None:
        # Cells past the curb contour, on its off-road side, are occupied.
        # The side is resolved per station against the local centerline so
        # curving roads with sign-changing laterals stay correct.
        xs = grid.x_centers()
        curb_y = curb.y_at(xs)
        center_y = np.interp(xs, hdmap.centerline[:, 0],
                             hdmap.centerline[:, 1])
        outward = np.where(curb_y <= center_y, -1.0, 1.0)
        beyond = (yy - curb_y[:, None]) * outward[:, None] >= 0
        in_range = (xs >= curb.x_lo - 1e-9) & (xs <= curb.x_hi + 1e-9)
        grid.occupied |= beyond & in_range[:, None]

    for k, obj in enumerate(objects):
        poly = (footprints[k] if footprints is not None
                else _hull_vertices(obj.cluster.points[:, :2]))
        _rasterize_polygon(grid, poly)
    return grid


def _lawful_left_limit(lane_points, rel_station):
    """Lateral limit at the centerline, tightened by lane markers if any.

    Markers within 1.5 m of the centerline are taken as the ego lane's left
    divider; a robust median offset below zero shifts the limit inward.
    Without usable markers the limit is the centerline itself.
    """
    limit = np.zeros_like(rel_station)
    if lane_points is None or len(lane_points) == 0:
        return limit
    lat = np.asarray([p.position[1] for p in lane_points])
    near = np.abs(lat) <= 1.5
    if near.sum() >= 5:
        offset = float(np.median(lat[near]))
        if offset < 0:
            limit += offset
    return limit


def expand_safety(grid: OccupancyGrid, objects: list, contexts: list,
                  rules: dict, ego: EgoState, hdmap: HdMap,
                  footprints: list | None = None) -> OccupancyGrid:
    """Dilate obstacle footprints into a safety envelope.

    Lateral margin is clearance + w_ego/2 per class; the same base margin
    applies longitudinally, extended toward the ego by the braking distance
    v^2/(2a) for objects ahead. Objects behind the ego get lateral margin
    only. A pedestrian on a crosswalk occupies the full road width across
    the crosswalk's longitudinal extent. Occupied cells are never cleared.
    """
    out = grid.copy()
    brake = ego.braking_distance
    for k, (obj, ctx) in enumerate(zip(objects, contexts)):
        poly = (footprints[k] if footprints is not None
                else _hull_vertices(obj.cluster.points[:, :2]))
        if len(poly) == 0:
            continue
        rule = rule_for(obj.label, rules)
        base = rule.clearance + ego.width / 2.0
        ahead = poly[:, 0].max() >= 0.0
        back = base + brake if ahead else 0.0
        front = base if ahead else 0.0
        corners = np.array([[-back, -base], [-back, base],
                            [front, -base], [front, base]])
        padded = (poly[:, None, :] + corners[None, :, :]).reshape(-1, 2)
        _rasterize_polygon(out, _hull_vertices(padded))
        if ctx is RoadContext.CROSSWALK and obj.label == "pedestrian":
            _block_crosswalk(out, obj, hdmap, base + brake, base)
    return out


def _block_crosswalk(grid: OccupancyGrid, obj, hdmap: HdMap,
                     margin_near: float, margin_far: float):
    pos = np.asarray(obj.position, dtype=float).reshape(1, 2)
    for poly in hdmap.crosswalks:
        if polygon_contains(pos, poly)[0]:
            x_lo = poly[:, 0].min() - margin_near
            x_hi = poly[:, 0].max() + margin_far
            i_lo = max(0, int(np.floor((x_lo - grid.x0) / grid.resolution)))
            i_hi = min(grid.nx,
                       int(np.ceil((x_hi - grid.x0) / grid.resolution)))
            grid.occupied[i_lo:i_hi, :] = True
            return


def extract_boundary(grid: OccupancyGrid, ego: EgoState) -> DrivableSpace:
    """Trace the corridor by chaining free segments outward from the ego.

    Per station column the maximal free runs are the candidate segments; a
    segment joins the chain when it overlaps a connected segment of the
    previous column by at least the ego width. Among the chains reaching
    the farthest column, the one with the widest accumulated interval wins;
    its segment edges become the left/right boundary polylines. An occupied
    (or too narrow) ego cell yields an empty corridor.
    """
    res = grid.resolution
    i0, j0 = grid.index_of(0.0, 0.0)
    empty = DrivableSpace(np.zeros(0), np.zeros(0), np.ones(0), grid.x0,
                          grid.y0, res, grid.occupied.shape)
    if not grid.contains_index(i0, j0) or grid.occupied[i0, j0]:
        return empty
    min_cells = int(np.ceil(ego.width / res - 1e-9))

    segments = _free_runs(grid.occupied[i0])
    root = [seg for seg in segments if seg[0] <= j0 < seg[1]
            and seg[1] - seg[0] >= min_cells]
    if not root:
        return empty
    # Chain state per column: list of (j_lo, j_hi, aggregate_width, parent_id)
    chains = [[(root[0][0], root[0][1], root[0][1] - root[0][0], -1)]]
    for i in range(i0 + 1, grid.nx):
        prev = chains[-1]
        cur = []
        for j_lo, j_hi in _free_runs(grid.occupied[i]):
            if j_hi - j_lo < min_cells:
                continue
            best = -1
            best_agg = -1
            for pid, (p_lo, p_hi, agg, _) in enumerate(prev):
                overlap = min(j_hi, p_hi) - max(j_lo, p_lo)
                if overlap >= min_cells and agg > best_agg:
                    best, best_agg = pid, agg
            if best >= 0:
                cur.append((j_lo, j_hi, best_agg + (j_hi - j_lo), best))
        if not cur:
            break
        chains.append(cur)

    # Back-track the widest chain from the farthest column.
    leaf = int(np.argmax([c[2] for c in chains[-1]]))
    path = []
    for col in reversed(chains):
        seg = col[leaf]
        path.append(seg)
        leaf = seg[3]
    path.reverse()

    stations = grid.x0 + (i0 + np.arange(len(path)) + 0.5) * res
    right = np.array([grid.y0 + seg[0] * res for seg in path])
    left = np.array([grid.y0 + seg[1] * res for seg in path])
    return DrivableSpace(stations, left, right, grid.x0, grid.y0, res,
                         grid.occupied.shape)


def _free_runs(row: np.ndarray) -> list:
    """Maximal runs of free cells as (start, end) half-open index pairs."""
    free = ~row
    if not free.any():
        return []
    edges = np.diff(free.astype(np.int8))
    starts = list(np.flatnonzero(edges == 1) + 1)
    ends = list(np.flatnonzero(edges == -1) + 1)
    if free[0]:
        starts.insert(0, 0)
    if free[-1]:
        ends.append(len(free))
    return list(zip(starts, ends))


def drivable_iou(a, b) -> float:
    """Free-space IOU of two corridors or masks on the same grid frame.

    Empty union counts as identical (1.0).
    """
    mask_a = a.to_free_mask() if isinstance(a, DrivableSpace) else np.asarray(a)
    mask_b = b.to_free_mask() if isinstance(b, DrivableSpace) else np.asarray(b)
    if mask_a.shape != mask_b.shape:
        raise ValueError("free-space masks must share a grid frame")
    union = np.logical_or(mask_a, mask_b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(mask_a, mask_b).sum() / union)
