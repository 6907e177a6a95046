"""Synthetic scene generator: the ground-truth oracle for the pipeline.

Scenes are laid out in the vehicle frame with the ego mid-lane of a
two-lane road (lane divider at +lane_width/2, right boundary at
-lane_width/2). A scan-pattern ray caster produces the LiDAR cloud against
the road surface, optional raised sidewalks with curb faces, and box
obstacles; every return carries a ground-truth label. Precipitation is
injected as uniform volumetric Poisson clutter. Virtual cameras render
jittered 2D detections and lane-marker pixels from the same ground truth.

Labels: 0 = GROUND, -1 = NOISE, k >= 1 = object k (1-based index).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cloud import OdometrySample, PointCloud
from .fusion import CameraModel, Detection2D, camera_mount, \
    project_vehicle_points
from .hdmap import HdMap, PolylineFrame
from .transforms import RigidTransform

GROUND_LABEL = 0
NOISE_LABEL = -1

T0_NS = 1_700_000_000_000_000_000
SCAN_PERIOD_NS = 100_000_000

# Classes the virtual 2D detector knows; anything else goes undetected.
DETECTABLE_CLASSES = ("pedestrian", "car", "cyclist", "cone")


@dataclass(frozen=True)
class BoxSpec:
    """Ground-anchored axis-aligned box obstacle."""

    label: str
    x: float
    y: float
    length: float   # x extent, m
    width: float    # y extent, m
    height: float

    def __post_init__(self):
        if min(self.length, self.width, self.height) <= 0:
            raise ValueError("box extents must be positive")


@dataclass
class SceneSpec:
    """Deterministic description of one synthetic frame."""

    seed: int = 0
    road: str = "straight"          # "straight" or "arc"
    road_width: float = 8.0
    length: float = 70.0
    arc_radius: float = 200.0
    grade: float = 0.0              # rise per meter of station; straight only
    curb_height: float = 0.0        # 0 disables the raised sidewalk
    sidewalk_width: float = 3.0
    crosswalks: list = field(default_factory=list)   # (station_lo, station_hi)
    objects: list = field(default_factory=list)      # BoxSpec entries
    precipitation: float = 0.0      # clutter points per m^3
    noise_height: float = 4.0       # clutter volume height above ground
    sensor_height: float = 2.0
    d_phi: float = float(np.deg2rad(0.1))
    d_alpha: float = float(np.deg2rad(0.1))
    az_range: tuple = (float(np.deg2rad(-25.0)), float(np.deg2rad(25.0)))
    el_range: tuple = (float(np.deg2rad(-15.0)), 0.0)
    max_range: float = 80.0
    range_noise: float = 0.01
    ego_velocity: float = 0.0
    pixel_jitter: float = 1.0

    def __post_init__(self):
        if self.road not in ("straight", "arc"):
            raise ValueError("road must be 'straight' or 'arc'")
        if self.road == "arc" and abs(self.grade) > 0:
            raise ValueError("grades are only supported on straight roads")
        if self.road_width <= 0 or self.length <= 0:
            raise ValueError("road extents must be positive")
        if self.curb_height < 0 or self.precipitation < 0:
            raise ValueError("curb height and precipitation must be >= 0")
        half = self.road_width / 2
        frame = PolylineFrame(self._divider())
        for box in self.objects:
            s, lat, _ = frame.project(np.array([[box.x, box.y]]))
            if not 0.0 <= s[0] <= frame.length:
                raise ValueError(f"object at ({box.x}, {box.y}) off the map")
            if abs(lat[0]) > half + self.sidewalk_width:
                raise ValueError(f"object at ({box.x}, {box.y}) off the map")

    # ------------------------------------------------------------- geometry

    def _stations(self):
        if self.road == "straight":
            return np.array([-20.0, self.length + 10.0])
        return np.linspace(-20.0, self.length + 10.0,
                           max(int(self.length / 3), 12))

    def _offset_points(self, stations, lateral):
        """Points at given laterals relative to the lane divider.

        The ego drives mid-lane, so the divider runs at +road_width/4 in
        the vehicle frame.
        """
        divider_y = self.road_width / 4.0
        stations = np.asarray(stations, dtype=float)
        if self.road == "straight":
            return np.column_stack([stations,
                                    np.full_like(stations, divider_y + lateral)])
        r = self.arc_radius
        center = np.array([0.0, divider_y + r])
        theta = stations / r
        radial = np.column_stack([np.sin(theta), -np.cos(theta)])
        return center + (r - lateral) * radial

    def _divider(self):
        return self._offset_points(self._stations(), 0.0)

    def hdmap(self) -> HdMap:
        half = self.road_width / 2
        s = self._stations()
        sidewalks = [np.concatenate([
            self._offset_points(s, -half),
            self._offset_points(s[::-1], -half - self.sidewalk_width)])]
        crosswalks = []
        for lo, hi in self.crosswalks:
            crosswalks.append(np.concatenate([
                self._offset_points(np.array([lo, hi]), -half),
                self._offset_points(np.array([hi, lo]), half)]))
        return HdMap(left_boundary=self._offset_points(s, half),
                     right_boundary=self._offset_points(s, -half),
                     centerline=self._divider(),
                     crosswalks=crosswalks,
                     sidewalk_regions=sidewalks,
                     lane_width=half)

    def ground_z(self, x, station=None) -> np.ndarray:
        """Road surface height in the vehicle frame (z of the sensor is 0)."""
        s = x if station is None else station
        return self.grade * np.asarray(s, dtype=float) - self.sensor_height


@dataclass
class SceneFrame:
    """Everything the generator knows about one frame."""

    spec: SceneSpec
    cloud: PointCloud
    labels: np.ndarray
    hdmap: HdMap
    cameras: dict
    detections: dict
    lane_pixels: dict
    odometry: list
    reference_time: int
    truth_footprints: list          # (4, 2) corner polygon per object


def default_cameras() -> dict:
    return {"cam0": CameraModel(fx=900.0, fy=900.0, cx=640.0, cy=360.0,
                                pitch=0.05, cam_height=2.2,
                                width=1280, height=720,
                                mount=camera_mount(0.0, (0.5, 0.0, 0.2)))}


def _ray_directions(spec: SceneSpec):
    az = np.arange(spec.az_range[0], spec.az_range[1], spec.d_phi)
    el = np.arange(spec.el_range[0], spec.el_range[1] + 1e-12, spec.d_alpha)
    aa, ee = np.meshgrid(az, el, indexing="ij")
    dirs = np.stack([np.cos(ee) * np.cos(aa), np.cos(ee) * np.sin(aa),
                     np.sin(ee)], axis=-1).reshape(-1, 3)
    az_idx, el_idx = np.meshgrid(np.arange(len(az)), np.arange(len(el)),
                                 indexing="ij")
    frac = aa.reshape(-1) - spec.az_range[0]
    frac /= max(spec.az_range[1] - spec.az_range[0], 1e-9)
    return dirs, el_idx.reshape(-1), frac


def _plane_hits(spec: SceneSpec, dirs, offset: float):
    """Ray parameter against the surface z = grade * x - h + offset."""
    denom = dirs[:, 2] - spec.grade * dirs[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (offset - spec.sensor_height) / denom
    t[(denom >= -1e-12) | (t <= 0)] = np.inf
    return t


def _face_hits(spec: SceneSpec, dirs, boundary: np.ndarray):
    """Nearest hit on the vertical curb face extruded from a boundary."""
    best = np.full(len(dirs), np.inf)
    for a, b in zip(boundary[:-1], boundary[1:]):
        seg = b - a
        n = np.array([-seg[1], seg[0]])
        n /= np.linalg.norm(n)
        denom = dirs[:, 0] * n[0] + dirs[:, 1] * n[1]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (a @ n) / denom
        hit = dirs * t[:, None]
        u = ((hit[:, 0] - a[0]) * seg[0] + (hit[:, 1] - a[1]) * seg[1]) \
            / (seg @ seg)
        z_lo = spec.ground_z(hit[:, 0])
        ok = (t > 0) & (u >= 0) & (u <= 1) \
            & (hit[:, 2] >= z_lo) & (hit[:, 2] <= z_lo + spec.curb_height)
        best = np.where(ok & (t < best), t, best)
    return best


def _box_hits(spec: SceneSpec, dirs, box: BoxSpec):
    """Slab-method ray parameter against one ground-anchored box."""
    z0 = float(spec.ground_z(box.x))
    lo = np.array([box.x - box.length / 2, box.y - box.width / 2, z0])
    hi = np.array([box.x + box.length / 2, box.y + box.width / 2,
                   z0 + box.height])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = lo[None, :] / dirs
        t2 = hi[None, :] / dirs
    t_near = np.minimum(t1, t2).max(axis=1)
    t_far = np.maximum(t1, t2).min(axis=1)
    t = np.where((t_near <= t_far) & (t_near > 0), t_near, np.inf)
    return t


def generate_scene(spec: SceneSpec):
    """Ray-cast the scene; bit-identical output for identical specs."""
    rng = np.random.default_rng(spec.seed)
    dirs, rings, az_frac = _ray_directions(spec)
    half = spec.road_width / 2
    frame = PolylineFrame(spec._divider())
    hdmap = spec.hdmap()

    candidates = []   # (t, label) per surface
    t_road = _plane_hits(spec, dirs, 0.0)
    finite = np.isfinite(t_road)
    if spec.curb_height > 0:
        hit_xy = dirs[:, :2] * t_road[:, None]
        lat = np.full(len(dirs), np.inf)
        _, lat_f, _ = frame.project(hit_xy[finite])
        lat[finite] = lat_f
        t_road = np.where(np.abs(lat) <= half, t_road, np.inf)
        t_side = _plane_hits(spec, dirs, spec.curb_height)
        side_xy = dirs[:, :2] * t_side[:, None]
        lat_s = np.full(len(dirs), 0.0)
        fin_s = np.isfinite(t_side)
        _, lat_sf, _ = frame.project(side_xy[fin_s])
        lat_s[fin_s] = lat_sf
        t_side = np.where(np.abs(lat_s) > half, t_side, np.inf)
        candidates.append((t_side, GROUND_LABEL))
        candidates.append((_face_hits(spec, dirs, hdmap.right_boundary),
                           GROUND_LABEL))
        candidates.append((_face_hits(spec, dirs, hdmap.left_boundary),
                           GROUND_LABEL))
    candidates.append((t_road, GROUND_LABEL))
    for k, box in enumerate(spec.objects, start=1):
        candidates.append((_box_hits(spec, dirs, box), k))

    t_all = np.stack([c[0] for c in candidates])
    labels_all = np.array([c[1] for c in candidates])
    winner = np.argmin(t_all, axis=0)
    t_best = t_all[winner, np.arange(len(dirs))]
    keep = np.isfinite(t_best) & (t_best <= spec.max_range)

    t_kept = t_best[keep] + rng.normal(scale=spec.range_noise,
                                       size=int(keep.sum()))
    xyz = dirs[keep] * t_kept[:, None]
    labels = labels_all[winner[keep]]
    t_ns = T0_NS + (az_frac[keep] * SCAN_PERIOD_NS).astype(np.int64)
    intensity = np.where(labels == GROUND_LABEL, 40.0, 120.0)
    cloud = PointCloud(xyz, intensity, rings[keep].astype(np.int32), t_ns,
                       frame_id="lidar0")

    if spec.precipitation > 0:
        z0 = -spec.sensor_height + min(0.0, spec.grade * spec.length)
        volume = ((0.0, min(spec.length, spec.max_range)),
                  (-half - spec.sidewalk_width, half + 2.0),
                  (z0, z0 + spec.noise_height))
        cloud = inject_precipitation(cloud, spec.precipitation, rng, volume)
        labels = np.concatenate([labels, np.full(len(cloud) - len(labels),
                                                 NOISE_LABEL, dtype=labels.dtype)])

    cameras = default_cameras()
    detections = {name: _render_detections(spec, cam, rng)
                  for name, cam in cameras.items()}
    lane_pixels = {name: _render_lane_pixels(spec, cam, rng)
                   for name, cam in cameras.items()}
    reference_time = T0_NS + SCAN_PERIOD_NS
    pose = RigidTransform.identity()
    odometry = [OdometrySample(T0_NS - SCAN_PERIOD_NS, pose, spec.ego_velocity),
                OdometrySample(reference_time + SCAN_PERIOD_NS, pose,
                               spec.ego_velocity)]
    footprints = [_box_footprint(b) for b in spec.objects]
    return SceneFrame(spec, cloud, labels, hdmap, cameras, detections,
                      lane_pixels, odometry, reference_time, footprints)


def _box_footprint(box: BoxSpec) -> np.ndarray:
    hx, hy = box.length / 2, box.width / 2
    return np.array([[box.x - hx, box.y - hy], [box.x + hx, box.y - hy],
                     [box.x + hx, box.y + hy], [box.x - hx, box.y + hy]])


def inject_precipitation(cloud: PointCloud, rate: float, seed,
                         volume) -> PointCloud:
    """Append Poisson clutter, ``rate`` points/m^3 uniform over ``volume``.

    ``volume`` is ((x0, x1), (y0, y1), (z0, z1)); ``seed`` may be an int or
    a Generator. Existing points are untouched; clutter is appended so the
    caller can label the tail NOISE.
    """
    if rate < 0:
        raise ValueError("rate must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)
    (x0, x1), (y0, y1), (z0, z1) = volume
    vol = (x1 - x0) * (y1 - y0) * (z1 - z0)
    if vol <= 0:
        raise ValueError("volume must have positive measure")
    count = int(rng.poisson(rate * vol))
    if count == 0:
        return cloud.take(np.arange(len(cloud)))
    xyz = np.column_stack([rng.uniform(x0, x1, count),
                           rng.uniform(y0, y1, count),
                           rng.uniform(z0, z1, count)])
    t_lo = int(cloud.t_ns.min()) if len(cloud) else T0_NS
    t_ns = t_lo + rng.integers(0, SCAN_PERIOD_NS, count)
    return PointCloud(np.concatenate([cloud.xyz, xyz]),
                      np.concatenate([cloud.intensity, np.full(count, 5.0)]),
                      np.concatenate([cloud.ring,
                                      np.zeros(count, np.int32)]),
                      np.concatenate([cloud.t_ns, t_ns]),
                      cloud.frame_id)


def _render_detections(spec: SceneSpec, cam: CameraModel, rng) -> list:
    """Project ground-truth boxes into the camera with pixel jitter."""
    out = []
    for box in spec.objects:
        if box.label not in DETECTABLE_CLASSES:
            continue
        z0 = float(spec.ground_z(box.x))
        hx, hy = box.length / 2, box.width / 2
        corners = np.array([[box.x + sx * hx, box.y + sy * hy, z0 + sz]
                            for sx in (-1, 1) for sy in (-1, 1)
                            for sz in (0.0, box.height)])
        pix, scale = project_vehicle_points(cam, corners)
        if (scale <= 0.1).any():
            continue
        x_lo, y_lo = pix.min(axis=0)
        x_hi, y_hi = pix.max(axis=0)
        jit = rng.normal(scale=spec.pixel_jitter, size=4)
        x_lo, y_lo, x_hi, y_hi = (x_lo + jit[0], y_lo + jit[1],
                                  x_hi + jit[2], y_hi + jit[3])
        x_lo, x_hi = np.clip([x_lo, x_hi], 0, cam.width)
        y_lo, y_hi = np.clip([y_lo, y_hi], 0, cam.height)
        if x_hi - x_lo < 3 or y_hi - y_lo < 3:
            continue
        score = float(np.clip(0.8 + 0.15 * rng.standard_normal(), 0.3, 1.0))
        out.append(Detection2D(box.label, float(x_lo), float(y_lo),
                               float(x_hi), float(y_hi), score))
    return out


# --------------------------------------------------------------- scenarios

# Class extents (length, width, height) sampled uniformly inside ranges.
CLASS_GEOMETRY = {
    "pedestrian": ((0.35, 0.5), (0.5, 0.7), (1.6, 1.8)),
    "car": ((4.0, 4.8), (1.7, 2.0), (1.4, 1.6)),
    "cyclist": ((1.5, 1.9), (0.5, 0.7), (1.6, 1.8)),
    "cone": ((0.28, 0.32), (0.28, 0.32), (0.6, 0.75)),
}

# Matches the default clearance rules; used to keep sampled scenes away
# from knife-edge corridors where a centimeter decides pass vs. block.
_CLEARANCE = {"pedestrian": 1.0, "car": 0.5, "cyclist": 1.0, "cone": 0.3}


def _sample_box(rng, label, x, y) -> BoxSpec:
    (l0, l1), (w0, w1), (h0, h1) = CLASS_GEOMETRY[label]
    return BoxSpec(label, float(x), float(y), float(rng.uniform(l0, l1)),
                   float(rng.uniform(w0, w1)), float(rng.uniform(h0, h1)))


def _angular_halfwidth(box: BoxSpec) -> float:
    radius = float(np.hypot(box.length, box.width)) / 2
    return float(np.arctan2(radius, np.hypot(box.x, box.y)))


def _placement_ok(box: BoxSpec, placed: list) -> bool:
    """No overlap, no mutual occlusion, no cluster merging.

    Azimuth intervals (with a 2 degree guard) must stay disjoint so every
    object keeps an unshadowed line of sight from the sensor.
    """
    az = np.arctan2(box.y, box.x)
    hw = _angular_halfwidth(box)
    for other in placed:
        if np.hypot(box.x - other.x, box.y - other.y) < 3.0:
            return False
        gap = abs(az - np.arctan2(other.y, other.x))
        if gap < hw + _angular_halfwidth(other) + np.deg2rad(2.0):
            return False
    return True


def _ego_lane_y(rng, label, width, ego_width=2.0, lane_half=2.0):
    """Lateral position whose safety envelope clearly blocks or passes."""
    margin = width / 2 + _CLEARANCE.get(label, 1.0) + ego_width / 2
    for _ in range(50):
        y = float(rng.uniform(-lane_half + 0.4, lane_half - 0.4))
        gap_left = lane_half - (y + margin)
        gap_right = (y - margin) + lane_half
        if max(gap_left, gap_right) <= ego_width - 0.5 \
                or max(gap_left, gap_right) >= ego_width + 0.5:
            return y
    return 0.0


def _scatter_objects(rng, n_ego, n_opposing, ego_classes, x_range):
    placed = []
    tries = 0
    while len(placed) < n_ego and tries < 200:
        tries += 1
        label = ego_classes[int(rng.integers(len(ego_classes)))]
        x_hi = min(x_range[1], 30.0) if label == "cone" else x_range[1]
        x = float(rng.uniform(x_range[0], x_hi))
        geom = _sample_box(rng, label, x, 0.0)
        box = replace(geom, y=_ego_lane_y(rng, label, geom.width))
        if _placement_ok(box, placed):
            placed.append(box)
    want = len(placed) + n_opposing
    while len(placed) < want and tries < 400:
        tries += 1
        box = _sample_box(rng, "car", float(rng.uniform(*x_range)),
                          float(rng.uniform(3.6, 5.0)))
        if _placement_ok(box, placed):
            placed.append(box)
    return placed


def snow_scene(seed: int, n_objects=(3, 8), noise_fraction=0.3) -> SceneSpec:
    """Heavy-precipitation frame: clutter tuned to the target return share."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_objects[0], n_objects[1] + 1))
    n_oppose = int(rng.integers(0, 2))
    objects = _scatter_objects(rng, n - n_oppose, n_oppose,
                               ("pedestrian", "cyclist", "cone", "car"),
                               (9.0, 48.0))
    # Empty-geometry return count is ~68k for the default pattern; the
    # clutter volume below is ~3.1e3 m^3.
    rate = noise_fraction / (1.0 - noise_fraction) * 68_000 / 3_120.0
    return SceneSpec(seed=seed, length=60.0, objects=objects,
                     precipitation=rate)


def sunny_scene(seed: int, n_objects=(3, 8)) -> SceneSpec:
    """Clear-weather frame with thin ego-lane objects and opposing cars."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_objects[0], n_objects[1] + 1))
    n_ego = int(rng.integers(1, min(3, n) + 1))
    objects = _scatter_objects(rng, n_ego, n - n_ego,
                               ("pedestrian", "cyclist", "cone"),
                               (12.0, 45.0))
    return SceneSpec(seed=seed, length=60.0, objects=objects)


def crosswalk_scene(seed: int, with_pedestrian: bool = True) -> SceneSpec:
    """A crosswalk ahead, optionally with a pedestrian on it."""
    rng = np.random.default_rng(seed)
    x_lo = float(rng.uniform(16.0, 32.0))
    crosswalk = (x_lo, x_lo + 3.0)
    objects = []
    if with_pedestrian:
        x = float(rng.uniform(x_lo + 0.5, x_lo + 2.5))
        y = float(rng.uniform(-1.6, 5.6))
        objects.append(_sample_box(rng, "pedestrian", x, y))
    return SceneSpec(seed=seed, length=60.0, crosswalks=[crosswalk],
                     objects=objects)


def sample_scene(kind: str, seed: int) -> SceneSpec:
    """Named scenario families for dataset synthesis."""
    if kind == "snow":
        return snow_scene(seed)
    if kind == "sunny":
        return sunny_scene(seed)
    if kind == "crosswalk":
        return crosswalk_scene(seed)
    raise ValueError(f"unknown scenario kind: {kind}")


def _render_lane_pixels(spec: SceneSpec, cam: CameraModel, rng) -> np.ndarray:
    """Lane-divider marker pixels (lane_id, u, v) visible to the camera."""
    stations = np.arange(5.0, spec.length, 1.0)
    pts = spec._offset_points(stations, 0.0)
    z = spec.ground_z(stations) + 0.01
    world = np.column_stack([pts, z])
    pix, scale = project_vehicle_points(cam, world)
    ok = (scale > 0.5) & (pix[:, 0] >= 1) & (pix[:, 0] < cam.width - 1) \
        & (pix[:, 1] >= 1) & (pix[:, 1] < cam.height - 1)
    pix = pix[ok] + rng.normal(scale=0.5, size=(int(ok.sum()), 2))
    pix[:, 0] = np.clip(pix[:, 0], 0, cam.width)
    pix[:, 1] = np.clip(pix[:, 1], 0, cam.height)
    return np.column_stack([np.zeros(len(pix)), pix])
