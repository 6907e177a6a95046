"""HD-map handling: boundary polylines, station/lateral projection, ROI crop.

Map geometry is 2D (x, y in meters). Lateral coordinates follow the vehicle
convention: positive to the left of the travel direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .transforms import RigidTransform

# A pose farther than this from every boundary vertex is outside the map.
MAX_POSE_TO_BOUNDARY = 100.0


def _as_polyline(arr, name: str, min_len: int = 2) -> np.ndarray:
    out = np.asarray(arr, dtype=float).reshape(-1, 2)
    if len(out) < min_len:
        raise ValueError(f"{name} needs at least {min_len} vertices")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite vertices")
    return out


@dataclass
class HdMap:
    """Coarse road prior: boundaries, centerline, crosswalk/sidewalk polygons."""

    left_boundary: np.ndarray
    right_boundary: np.ndarray
    centerline: np.ndarray
    crosswalks: list = field(default_factory=list)
    sidewalk_regions: list = field(default_factory=list)
    lane_width: float = 4.0

    def __post_init__(self):
        self.left_boundary = _as_polyline(self.left_boundary, "left_boundary")
        self.right_boundary = _as_polyline(self.right_boundary, "right_boundary")
        self.centerline = _as_polyline(self.centerline, "centerline")
        self.crosswalks = [_as_polyline(p, "crosswalk", 3) for p in self.crosswalks]
        self.sidewalk_regions = [_as_polyline(p, "sidewalk", 3)
                                 for p in self.sidewalk_regions]
        if self.lane_width <= 0:
            raise ValueError("lane_width must be positive")


def map_to_vehicle_frame(hdmap: HdMap, pose: RigidTransform) -> HdMap:
    """Express all map geometry in the vehicle frame given the vehicle pose.

    Uses the yaw component of the pose so the planar transform stays rigid;
    lengths and polygon areas are preserved exactly.
    """
    yaw = pose.yaw()
    c, s = np.cos(yaw), np.sin(yaw)
    rot_t = np.array([[c, s], [-s, c]])  # inverse 2D rotation
    t2 = pose.translation[:2]

    def tf(poly):
        return (poly - t2) @ rot_t.T

    return HdMap(
        left_boundary=tf(hdmap.left_boundary),
        right_boundary=tf(hdmap.right_boundary),
        centerline=tf(hdmap.centerline),
        crosswalks=[tf(p) for p in hdmap.crosswalks],
        sidewalk_regions=[tf(p) for p in hdmap.sidewalk_regions],
        lane_width=hdmap.lane_width,
    )


class PolylineFrame:
    """Station/lateral (Frenet-style) coordinates along a 2D polyline.

    Station is arclength from the first vertex; lateral is the signed
    perpendicular offset, positive on the left of the travel direction.
    """

    def __init__(self, polyline: np.ndarray):
        poly = _as_polyline(polyline, "polyline")
        seg = np.diff(poly, axis=0)
        lens = np.hypot(seg[:, 0], seg[:, 1])
        if not np.any(lens > 0):
            raise ValueError("polyline has zero length")
        # Drop zero-length segments so directions are well defined.
        self.vertices = np.concatenate([poly[:1], poly[1:][lens > 0]])
        seg = np.diff(self.vertices, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.seg_dir = seg / self.seg_len[:, None]
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self._vertex_tree = None

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def project(self, points: np.ndarray, chunk: int = 65536):
        """Project points (N, 2) onto the polyline.

        Returns (station, lateral, distance) arrays. Beyond the polyline ends
        the projection clamps to the end vertices, so station saturates at 0
        or at the total length. For long polylines only the segments adjacent
        to each point's nearest vertex are tested, which is exact whenever
        segments are not grossly shorter than the point's offset.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        n = len(pts)
        n_seg = len(self.seg_len)
        if n == 0:
            z = np.zeros(0)
            return z, z.copy(), z.copy()
        if n_seg <= 4:
            seg_ids = np.broadcast_to(np.arange(n_seg), (n, n_seg))
        else:
            if self._vertex_tree is None:
                from scipy.spatial import cKDTree
                self._vertex_tree = cKDTree(self.vertices)
            _, nearest = self._vertex_tree.query(pts)
            offsets = np.arange(-2, 2)
            seg_ids = np.clip(nearest[:, None] + offsets[None, :], 0,
                              n_seg - 1)
        station = np.empty(n)
        lateral = np.empty(n)
        dist = np.empty(n)
        for lo in range(0, n, chunk):
            p = pts[lo:lo + chunk]
            sid = seg_ids[lo:lo + chunk]
            a = self.vertices[sid]                     # (m, k, 2)
            d = self.seg_dir[sid]
            rel = p[:, None, :] - a
            t = np.einsum("mkj,mkj->mk", rel, d)
            t = np.clip(t, 0.0, self.seg_len[sid])
            diff = rel - t[:, :, None] * d
            d2 = np.einsum("mkj,mkj->mk", diff, diff)
            best = np.argmin(d2, axis=1)
            rows = np.arange(len(p))
            sb = sid[rows, best]
            tb = t[rows, best]
            db = self.seg_dir[sb]
            relb = p - self.vertices[sb]
            cross = db[:, 0] * relb[:, 1] - db[:, 1] * relb[:, 0]
            station[lo:lo + len(p)] = self.cum[sb] + tb
            lateral[lo:lo + len(p)] = cross
            dist[lo:lo + len(p)] = np.sqrt(d2[rows, best])
        return station, lateral, dist

    def lateral_profile(self, polyline: np.ndarray):
        """Station-indexed lateral offsets of another polyline vs. this one.

        Returns a callable lat(s) built from linear interpolation of the
        other polyline's vertex projections.
        """
        s, lat, _ = self.project(np.asarray(polyline, dtype=float))
        order = np.argsort(s, kind="stable")
        s, lat = s[order], lat[order]

        def lat_at(stations):
            return np.interp(np.asarray(stations, dtype=float), s, lat)

        return lat_at


def polygon_contains(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test, vectorized over points (N, 2)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    poly = np.asarray(polygon, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    x0, y0 = poly[-1]
    for x1, y1 in poly:
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_int = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < x_int)
        x0, y0 = x1, y1
    return inside


def crop_to_roi(cloud: PointCloud, hdmap: HdMap, pose: RigidTransform,
                margin: float, sidewalk_margin: float = 0.0) -> PointCloud:
    """Keep points in the lateral road band, with optional sidewalk slack.

    The band spans from ``margin`` outside the left boundary to ``margin +
    sidewalk_margin`` outside the right boundary (the extra right-side slack
    keeps curb candidates alive). Longitudinal coverage follows the map's
    centerline extent.
    """
    mask = crop_to_roi_mask(cloud, hdmap, pose, margin, sidewalk_margin)
    return cloud.take(np.flatnonzero(mask))


def crop_to_roi_mask(cloud: PointCloud, hdmap: HdMap, pose: RigidTransform,
                     margin: float, sidewalk_margin: float = 0.0) -> np.ndarray:
    if margin < 0 or sidewalk_margin < 0:
        raise ValueError("margins must be non-negative")
    local = map_to_vehicle_frame(hdmap, pose)
    boundary_pts = np.concatenate([local.left_boundary, local.right_boundary])
    if np.hypot(boundary_pts[:, 0], boundary_pts[:, 1]).min() > MAX_POSE_TO_BOUNDARY:
        raise ValueError("pose outside map extent: no boundary within "
                         f"{MAX_POSE_TO_BOUNDARY:.0f} m")
    if len(cloud) == 0:
        return np.zeros(0, dtype=bool)
    frame = PolylineFrame(local.centerline)
    lat_left = frame.lateral_profile(local.left_boundary)
    lat_right = frame.lateral_profile(local.right_boundary)
    s, d, _ = frame.project(cloud.xyz[:, :2])
    return (d <= lat_left(s) + margin) & (d >= lat_right(s) - margin - sidewalk_margin)
