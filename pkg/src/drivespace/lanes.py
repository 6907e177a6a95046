"""Lift 2D lane-marker pixels onto the estimated ground planes.

Each pixel's back-projected ray is intersected with every grid's plane in
turn; the hit is accepted when it lands inside the station span of the grid
whose plane produced it. Rays that never produce a consistent forward hit
(above the horizon, parallel to a plane, unmodeled area) are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import CameraModel, pixel_ray_camera_ground
from .ground import GroundModelSet


@dataclass(frozen=True)
class LanePoint3D:
    """A lane-marker point on the estimated ground, vehicle frame."""

    position: np.ndarray
    lane_id: int
    grid_index: int


def lift_lane_points(cam: CameraModel, pixels, fset: GroundModelSet,
                     max_range: float = 120.0) -> list[LanePoint3D]:
    """Back-project lane pixels onto the per-grid ground planes.

    ``pixels`` rows are (lane_id, u, v). Pixels outside the image bounds are
    rejected; rays with no in-grid forward intersection are silently dropped.
    """
    px = np.asarray(pixels, dtype=float).reshape(-1, 3)
    if len(px) == 0 or len(fset) == 0:
        return []
    if (px[:, 1].min() < 0 or px[:, 1].max() > cam.width
            or px[:, 2].min() < 0 or px[:, 2].max() > cam.height):
        raise ValueError("lane pixels outside image bounds")
    origin = cam.mount.translation
    out = []
    for lane_id, u, v in px:
        d = cam.mount.rotation @ pixel_ray_camera_ground(cam, u, v)
        hit = _intersect_grids(origin, d, fset, max_range)
        if hit is not None:
            point, grid_idx = hit
            out.append(LanePoint3D(point, int(lane_id), grid_idx))
    return out


def _intersect_grids(origin, direction, fset: GroundModelSet, max_range):
    for gi, (grid, model) in enumerate(zip(fset.grids, fset.models)):
        # Plane a*x + b*y - z + c = 0 with normal (a, b, -1).
        normal = np.array([model.a, model.b, -1.0])
        denom = normal @ direction
        if abs(denom) < 1e-12:
            continue
        t = -(normal @ origin + model.c) / denom
        if t <= 0 or t > max_range:
            continue
        point = origin + t * direction
        gid = fset.grid_of(point[None, :2])[0]
        if gid == gi:
            return point, gi
    return None
