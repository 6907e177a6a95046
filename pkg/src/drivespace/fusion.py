"""Camera model, prior-based depth estimation, and cluster/detection matching.

Depth is estimated twice per detection, from the bounding-box width and
height together with per-class size priors, each with a first-order
propagated variance; the two are combined by inverse-variance averaging.
The association cost blends projected-box IOU with the Mahalanobis distance
between the camera position estimate and the cluster centroid, which keeps
matching usable when calibration error drives the IOU to zero.

The camera "ground frame" used throughout is anchored at the optical
center with x right, y down, z forward parallel to the ground; the pitch
rotation maps it into the optical frame. ``mount`` takes ground-frame
coordinates to the vehicle frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .clustering import Cluster
from .transforms import RigidTransform

# Rotation part of the default mount: camera ground frame (x right, y down,
# z forward) to vehicle frame (x forward, y left, z up).
CAMERA_AXES_TO_VEHICLE = np.array([[0.0, 0.0, 1.0],
                                   [-1.0, 0.0, 0.0],
                                   [0.0, -1.0, 0.0]])

UNKNOWN = "UNKNOWN"
_INVALID_COST = 1e12


class BehindCameraError(ValueError):
    """Raised when a projected point has non-positive depth scale."""


def camera_mount(yaw: float = 0.0, position=(0.0, 0.0, 0.0)) -> RigidTransform:
    """Mount transform for a camera yawed about vehicle +z at ``position``."""
    return RigidTransform.from_yaw(yaw, position).compose(
        RigidTransform(CAMERA_AXES_TO_VEHICLE, np.zeros(3)))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus pitch and mounting of one camera."""

    fx: float
    fy: float
    cx: float
    cy: float
    pitch: float                      # rad, downward-positive tilt
    cam_height: float                 # optical center above ground, m
    width: int = 1280
    height: int = 960
    mount: RigidTransform = field(default_factory=camera_mount)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if abs(self.pitch) >= np.pi / 4:
            raise ValueError("pitch must satisfy |pitch| < pi/4")
        if self.cam_height <= 0:
            raise ValueError("camera height must be positive")

    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def pitch_matrix(self) -> np.ndarray:
        c, s = np.cos(self.pitch), np.sin(self.pitch)
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True)
class Detection2D:
    """One 2D detector output box in pixel coordinates."""

    label: str
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    score: float = 1.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("degenerate detection box")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")

    @property
    def w_p(self) -> float:
        return self.x_max - self.x_min

    @property
    def h_p(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self):
        return 0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)


@dataclass(frozen=True)
class ClassPrior:
    """Physical size priors and pixel noise for one object class.

    ``*_var`` fields are variances (m^2 or px^2).
    """

    label: str
    width_mean: float
    width_var: float
    height_mean: float
    height_var: float
    cam_height_var: float = 0.02**2
    wp_var: float = 16.0
    hp_var: float = 16.0

    def __post_init__(self):
        for v in (self.width_var, self.height_var, self.cam_height_var,
                  self.wp_var, self.hp_var):
            if v <= 0:
                raise ValueError("all prior variances must be positive")


def default_priors() -> dict:
    """Engineering size priors for the supported classes."""
    table = {
        "pedestrian": (0.6, 0.15, 1.7, 0.12),
        "car": (1.9, 0.2, 1.5, 0.15),
        "cyclist": (0.7, 0.2, 1.7, 0.15),
        "cone": (0.3, 0.05, 0.7, 0.1),
    }
    return {label: ClassPrior(label, w, sw * sw, h, sh * sh)
            for label, (w, sw, h, sh) in table.items()}


@dataclass(frozen=True)
class DepthEstimate:
    """Forward distance (m) with variance and the estimator that produced it."""

    z: float
    var: float
    source: str

    def __post_init__(self):
        if self.z <= 0 or self.var <= 0:
            raise ValueError("depth and variance must be positive")


# ------------------------------------------------------------- projection

def project_camera_ground(cam: CameraModel, points: np.ndarray):
    """Project camera-ground-frame points; returns (pixels, scale).

    ``scale`` is the homogeneous depth y*sin(pitch) + z*cos(pitch); points
    with scale <= 0 are behind the camera and yield invalid pixels.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    h = (cam.intrinsics() @ cam.pitch_matrix() @ pts.T).T
    scale = h[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        pix = h[:, :2] / scale[:, None]
    return pix, scale


def project_point(cam: CameraModel, point) -> tuple:
    """Project one camera-ground-frame point to pixels; errors behind camera."""
    pix, scale = project_camera_ground(cam, np.asarray(point, dtype=float))
    if scale[0] <= 0:
        raise BehindCameraError(f"projection scale {scale[0]:.3f} <= 0")
    return float(pix[0, 0]), float(pix[0, 1])


def vehicle_to_camera_ground(cam: CameraModel, points: np.ndarray) -> np.ndarray:
    return cam.mount.inverse().apply(np.asarray(points, dtype=float))


def project_vehicle_points(cam: CameraModel, points: np.ndarray):
    """Project vehicle-frame points; returns (pixels, scale)."""
    return project_camera_ground(cam, vehicle_to_camera_ground(cam, points))


def pixel_ray_camera_ground(cam: CameraModel, u: float, v: float) -> np.ndarray:
    """Back-projected ray direction in the camera ground frame."""
    d = np.linalg.solve(cam.intrinsics(), np.array([u, v, 1.0]))
    return cam.pitch_matrix().T @ d


# ------------------------------------------------------- depth estimation

def estimate_depth_width(cam: CameraModel, det: Detection2D,
                         prior: ClassPrior) -> DepthEstimate | None:
    """Depth from box width and the class width prior; None when rejected."""
    if det.w_p < 2.0:
        raise ValueError("detection narrower than 2 px")
    cos_t, tan_t = np.cos(cam.pitch), np.tan(cam.pitch)
    y_w = cam.cam_height - prior.height_mean / 2.0
    z = cam.fx * prior.width_mean / (det.w_p * cos_t) - y_w * tan_t
    if z <= 0:
        return None
    sigma_yw2 = prior.cam_height_var + prior.height_var / 4.0
    var = (det.w_p**4 * sigma_yw2 * np.sin(cam.pitch)**2
           + det.w_p**2 * cam.fx**2 * prior.width_var
           + prior.width_mean**2 * cam.fx**2 * prior.wp_var) \
        / (det.w_p**4 * cos_t**2)
    return DepthEstimate(float(z), float(var), "width")


def estimate_depth_height(cam: CameraModel, det: Detection2D,
                          prior: ClassPrior) -> DepthEstimate | None:
    """Depth from box height via the pitched-projection relation.

    The variance is the first-order propagation over camera height, object
    height and box height, with the object-height term carrying both the
    direct and the ground-anchor contribution.
    """
    if det.h_p < 2.0:
        raise ValueError("detection shorter than 2 px")
    cos_t, sin_t = np.cos(cam.pitch), np.sin(cam.pitch)
    tan_t = sin_t / cos_t
    y_p = det.center[1]
    a = (cam.cy - y_p) * sin_t + cam.fy * cos_t
    y_w = cam.cam_height - prior.height_mean / 2.0
    z = a * prior.height_mean / (det.h_p * cos_t) - y_w * tan_t
    if z <= 0:
        return None
    dz_dh = a / (det.h_p * cos_t) + tan_t / 2.0
    dz_dcam = -tan_t
    dz_dhp = -a * prior.height_mean / (det.h_p**2 * cos_t)
    var = (dz_dh**2 * prior.height_var
           + dz_dcam**2 * prior.cam_height_var
           + dz_dhp**2 * prior.hp_var)
    return DepthEstimate(float(z), float(var), "height")


def fuse_depth(a: DepthEstimate | None,
               b: DepthEstimate | None) -> DepthEstimate | None:
    """Inverse-variance average of two estimates; passthrough when one
    estimator was rejected."""
    if a is None:
        return b
    if b is None:
        return a
    total = a.var + b.var
    z = (a.z * b.var + b.z * a.var) / total
    var = a.var * b.var / total
    return DepthEstimate(float(z), float(var), "fused")


def camera_position_estimate(cam: CameraModel, det: Detection2D,
                             fused: DepthEstimate):
    """Ground-plane object position from a detection plus fused depth.

    The ray through the box center is scaled so its camera-ground forward
    component equals the fused depth, then expressed in the vehicle frame.
    The 2x2 covariance carries the depth variance along the viewing ray and
    the pixel-width noise across it.
    """
    u, v = det.center
    d = pixel_ray_camera_ground(cam, u, v)
    if d[2] <= 0:
        raise BehindCameraError("detection ray points behind the camera")
    p_ground = d * (fused.z / d[2])
    p_vehicle = cam.mount.apply(p_ground)
    ray = cam.mount.rotation @ d
    ray_xy = ray[:2]
    norm = np.linalg.norm(ray_xy)
    if norm < 1e-12:
        raise BehindCameraError("viewing ray has no ground-plane component")
    r = ray_xy / norm
    t = np.array([-r[1], r[0]])
    sigma_lat2 = prior_lateral_var(cam, det, fused)
    cov = fused.var * np.outer(r, r) + sigma_lat2 * np.outer(t, t)
    return p_vehicle[:2], cov


def prior_lateral_var(cam: CameraModel, det: Detection2D,
                      fused: DepthEstimate, wp_sigma_px: float = 4.0) -> float:
    """Lateral position variance: pixel noise mapped through fx at depth z."""
    return float((fused.z * wp_sigma_px / cam.fx) ** 2)


# ------------------------------------------------------------ association

def bbox_iou(a, b) -> float:
    """IOU of two (x_min, y_min, x_max, y_max) boxes."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter <= 0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def projected_cluster_bbox(cam: CameraModel, cluster: Cluster):
    """Axis-aligned pixel box of the cluster's visible points, or None."""
    pix, scale = project_vehicle_points(cam, cluster.points)
    ok = scale > 0
    if not ok.any():
        return None
    p = pix[ok]
    return (p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max())


def mahalanobis(delta: np.ndarray, cov: np.ndarray) -> float:
    return float(np.sqrt(delta @ np.linalg.solve(cov, delta)))


def association_cost(cluster: Cluster, det: Detection2D, cam: CameraModel,
                     prior: ClassPrior | None, delta: float,
                     position=None, cov=None) -> float:
    """Blended cost delta*(1 - IOU) + (1 - delta)*mahalanobis.

    ``position``/``cov`` may carry a precomputed camera position estimate;
    otherwise it is derived here from the detection and prior. Without a
    usable prior the cost falls back to the pure IOU term. Clusters fully
    behind the camera cost infinity.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    box = projected_cluster_bbox(cam, cluster)
    if box is None:
        return float("inf")
    iou = bbox_iou(box, (det.x_min, det.y_min, det.x_max, det.y_max))
    if position is None:
        if prior is None:
            return 1.0 - iou
        fused = fuse_depth(estimate_depth_width(cam, det, prior),
                           estimate_depth_height(cam, det, prior))
        if fused is None:
            return 1.0 - iou
        position, cov = camera_position_estimate(cam, det, fused)
    dist = mahalanobis(np.asarray(position) - cluster.centroid[:2], cov)
    return delta * (1.0 - iou) + (1.0 - delta) * dist


def assign(cost: np.ndarray) -> list:
    """Minimum-total-cost one-to-one assignment of a rectangular matrix.

    Returns (row, col) pairs sorted by row. Solved with the Hungarian
    method, which is exact; ties between equal-total assignments resolve
    deterministically for identical inputs.
    """
    rows, cols = linear_sum_assignment(np.asarray(cost, dtype=float))
    return sorted(zip(rows.tolist(), cols.tolist()))


@dataclass
class MatchResult:
    pairs: list                      # (cluster_idx, detection_idx, cost)
    unmatched_clusters: list
    unmatched_detections: list


def match(clusters: list, detections: list, cam: CameraModel, priors: dict,
          delta: float, gate: float | None) -> MatchResult:
    """Optimal one-to-one assignment of clusters to detections.

    The Hungarian solution minimizes total cost; pairs costing more than
    ``gate`` (when given) are dropped afterwards and reported unmatched.
    Pairs are returned sorted by cluster index.
    """
    nc, nd = len(clusters), len(detections)
    if nc == 0 or nd == 0:
        return MatchResult([], list(range(nc)), list(range(nd)))
    cost = np.full((nc, nd), _INVALID_COST)
    for j, det in enumerate(detections):
        prior = priors.get(det.label)
        position = cov = None
        if prior is not None:
            fused = fuse_depth(estimate_depth_width(cam, det, prior),
                               estimate_depth_height(cam, det, prior))
            if fused is not None:
                position, cov = camera_position_estimate(cam, det, fused)
        for i, cluster in enumerate(clusters):
            c = association_cost(cluster, det, cam, prior, delta,
                                 position, cov)
            if np.isfinite(c):
                cost[i, j] = c
    pairs, matched_c, matched_d = [], set(), set()
    for i, j in assign(cost):
        c = float(cost[i, j])
        if c >= _INVALID_COST or (gate is not None and c > gate):
            continue
        pairs.append((int(i), int(j), c))
        matched_c.add(int(i))
        matched_d.add(int(j))
    pairs.sort(key=lambda p: p[0])
    return MatchResult(pairs,
                       [i for i in range(nc) if i not in matched_c],
                       [j for j in range(nd) if j not in matched_d])


@dataclass
class FusedObject:
    """A LiDAR cluster with whatever semantics the cameras could attach."""

    cluster: Cluster
    label: str = UNKNOWN
    depth: DepthEstimate | None = None
    cost: float | None = None

    @property
    def position(self) -> np.ndarray:
        return self.cluster.centroid[:2]


def fuse_frame(clusters: list, detections_by_camera: dict, cameras: dict,
               priors: dict, delta: float, gate: float | None) -> list:
    """Match every camera independently and merge by lowest cost.

    Cameras are processed in sorted-name order; a cluster claimed by several
    cameras keeps the cheapest association. Unmatched clusters stay UNKNOWN
    and remain obstacles.
    """
    best: dict[int, tuple] = {}
    for name in sorted(detections_by_camera):
        if name not in cameras:
            continue
        cam = cameras[name]
        dets = detections_by_camera[name]
        result = match(clusters, dets, cam, priors, delta, gate)
        for ci, dj, cost in result.pairs:
            if ci not in best or cost < best[ci][0]:
                det = dets[dj]
                prior = priors.get(det.label)
                fused = None
                if prior is not None:
                    fused = fuse_depth(estimate_depth_width(cam, det, prior),
                                       estimate_depth_height(cam, det, prior))
                best[ci] = (cost, det.label, fused)
    out = []
    for i, cluster in enumerate(clusters):
        if i in best:
            cost, label, depth = best[i]
            out.append(FusedObject(cluster, label, depth, cost))
        else:
            out.append(FusedObject(cluster))
    return out
