"""Per-frame perception pipeline and dataset-level runner.

Stage order per frame: crop, deskew, downsample, ground removal, curb,
clustering, camera fusion, lane lifting, drivable space. Each stage's wall
time is recorded; file parsing is reported separately under ``io``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import (PointCloud, concatenate_clouds, interpolator_from_odometry,
                    motion_compensate, voxel_downsample_indices)
from .clustering import adaptive_dbscan, drop_ground_residual
from .config import PipelineConfig
from .drivable import (DrivableSpace, EgoState, build_occupancy,
                       classify_road_context, expand_safety, extract_boundary)
from .fusion import fuse_frame
from .ground import (fit_curb, refine_obstacle_flags, run_ground_removal,
                     select_curb_candidates)
from .hdmap import HdMap, PolylineFrame, crop_to_roi_mask, map_to_vehicle_frame
from .lanes import lift_lane_points
from .metrics import compute_detection_metrics, evaluate_frame
from . import frameio

log = logging.getLogger("drivespace")

STAGES = ("crop", "deskew", "downsample", "ground", "curb", "cluster",
          "fusion", "lanes", "space")

# Curb-hugging structure this close to the fitted contour is road edge, not
# an object; it is kept out of the clustering input.
CURB_EXCLUSION_BAND = 0.2
# A curb fit deviating more than this from the mapped boundary is rejected.
MAX_CURB_MAP_DEVIATION = 2.0


@dataclass
class FrameData:
    """One frame's raw inputs, already parsed."""

    frame_id: str
    clouds: dict                      # sensor name -> PointCloud
    odometry: list
    detections: dict = field(default_factory=dict)
    lane_pixels: dict = field(default_factory=dict)
    reference_time: int | None = None


@dataclass
class FrameResult:
    frame_id: str
    cloud: PointCloud                 # pipeline cloud after downsampling
    orig_indices: np.ndarray          # pipeline point -> concatenated input
    n_input: int
    flags: np.ndarray
    ground_models: object
    curb: object
    clusters: object
    cluster_labels_full: np.ndarray   # cluster id per pipeline point
    fused: list
    contexts: list
    lane_points: list
    grid: object
    space: DrivableSpace
    timings: dict
    ego_velocity: float = 0.0


def scene_to_frame(scene) -> FrameData:
    """Adapter from a synthetic SceneFrame to pipeline input."""
    return FrameData(frame_id="synthetic",
                     clouds={"lidar0": scene.cloud},
                     odometry=scene.odometry,
                     detections=scene.detections,
                     lane_pixels=scene.lane_pixels,
                     reference_time=scene.reference_time)


def process_frame(frame: FrameData, hdmap: HdMap,
                  cfg: PipelineConfig) -> FrameResult:
    timings = {}
    names = sorted(frame.clouds)
    cloud = concatenate_clouds([frame.clouds[n] for n in names],
                               [cfg.sensor_extrinsic(n) for n in names])
    n_input = len(cloud)
    reference_time = frame.reference_time
    if reference_time is None:
        reference_time = int(cloud.t_ns.max()) if len(cloud) else 0
    interp = interpolator_from_odometry(frame.odometry)
    pose = interp.pose_at(reference_time)
    velocity = float(np.interp(
        reference_time - frame.odometry[0].timestamp,
        [s.timestamp - frame.odometry[0].timestamp for s in frame.odometry],
        [s.velocity for s in frame.odometry]))

    t0 = time.perf_counter()
    mask = crop_to_roi_mask(cloud, hdmap, pose, cfg.roi.margin,
                            cfg.roi.sidewalk_margin)
    kept = np.flatnonzero(mask)
    cloud = cloud.take(kept)
    timings["crop"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    cloud = motion_compensate(cloud, frame.odometry, reference_time)
    timings["deskew"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    idx = voxel_downsample_indices(cloud, cfg.cluster.voxel)
    cloud = cloud.take(idx)
    orig_indices = kept[idx]
    timings["downsample"] = time.perf_counter() - t0

    map_v = map_to_vehicle_frame(hdmap, pose)

    t0 = time.perf_counter()
    flags, fset = run_ground_removal(cloud, map_v, cfg.ground)
    timings["ground"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    curb = None
    candidates = select_curb_candidates(cloud, flags, fset, map_v, cfg.ground)
    if len(candidates):
        curb = fit_curb(cloud.xyz[candidates, :2], cfg.ground)
    if curb is not None and _curb_deviates_from_map(curb, map_v):
        curb = None
    if curb is not None:
        flags = refine_obstacle_flags(cloud, flags, candidates, curb)
    timings["curb"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    height = cloud.xyz[:, 2] - fset.height_at(cloud.xyz[:, :2]) \
        if len(fset) else np.zeros(len(cloud))
    obstacle_idx = np.flatnonzero(flags & ~_curb_structure_mask(
        cloud, flags, curb, height, cfg))
    clusters = adaptive_dbscan(cloud.xyz[obstacle_idx], cfg.cluster)
    clusters = drop_ground_residual(clusters, height[obstacle_idx])
    cluster_labels_full = np.full(len(cloud), -1, dtype=np.int64)
    cluster_labels_full[obstacle_idx] = clusters.labels
    # Re-anchor cluster indices to pipeline-cloud indexing.
    for c in clusters.clusters:
        c.indices = obstacle_idx[c.indices]
    timings["cluster"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    fused = fuse_frame(clusters.clusters, frame.detections, cfg.cameras,
                       cfg.fusion.priors, cfg.fusion.delta, cfg.fusion.gate)
    timings["fusion"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    lane_points = []
    for name in sorted(frame.lane_pixels):
        cam = cfg.cameras.get(name)
        px = frame.lane_pixels[name]
        if cam is None or len(px) == 0 or len(fset) == 0:
            continue
        inside = (px[:, 1] >= 0) & (px[:, 1] <= cam.width) \
            & (px[:, 2] >= 0) & (px[:, 2] <= cam.height)
        lane_points.extend(lift_lane_points(cam, px[inside], fset))
    timings["lanes"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    contexts = classify_road_context(fused, map_v)
    ego = EgoState(width=cfg.ego.width, velocity=max(velocity, 0.0),
                   decel=cfg.ego.decel)
    grid = build_occupancy(fused, curb, lane_points, map_v,
                           cfg.safety.resolution, x_max=cfg.safety.x_max)
    grid = expand_safety(grid, fused, contexts, cfg.safety.rules, ego, map_v)
    space = extract_boundary(grid, ego)
    timings["space"] = time.perf_counter() - t0

    return FrameResult(frame.frame_id, cloud, orig_indices, n_input, flags,
                       fset, curb, clusters, cluster_labels_full, fused,
                       contexts, lane_points, grid, space, timings,
                       ego_velocity=ego.velocity)


def _curb_structure_mask(cloud, flags, curb, height, cfg) -> np.ndarray:
    """Obstacle points that are the curb itself rather than objects."""
    mask = np.zeros(len(cloud), dtype=bool)
    if curb is None:
        return mask
    y_curb = np.abs(curb.y_at(cloud.xyz[:, 0]))
    near = np.abs(np.abs(cloud.xyz[:, 1]) - y_curb) <= CURB_EXCLUSION_BAND
    low = height <= cfg.ground.h_curb + 0.05
    return flags & near & low


def _curb_deviates_from_map(curb, map_v) -> bool:
    xs = np.linspace(curb.x_lo, curb.x_hi, 16)
    pts = np.column_stack([xs, curb.y_at(xs)])
    _, _, dist = PolylineFrame(map_v.right_boundary).project(pts)
    return bool(dist.max() > MAX_CURB_MAP_DEVIATION)


# --------------------------------------------------------------- dataset run

def read_frame_dir(fdir: Path, cameras: dict) -> FrameData:
    clouds = {}
    for f in sorted(fdir.glob("cloud_*.csv")):
        name = f.stem.replace("cloud_", "", 1)
        clouds[name] = frameio.read_cloud(f, name)
    if not clouds:
        raise ValueError(f"{fdir}: no cloud files")
    odometry = frameio.read_pose(fdir / "pose.csv")
    detections = {}
    for f in sorted(fdir.glob("detections_*.csv")):
        detections[f.stem.replace("detections_", "", 1)] = \
            frameio.read_detections(f)
    lanes = {}
    for f in sorted(fdir.glob("lanes_*.csv")):
        lanes[f.stem.replace("lanes_", "", 1)] = frameio.read_lanes(f)
    return FrameData(frame_id=fdir.name, clouds=clouds, odometry=odometry,
                     detections=detections, lane_pixels=lanes)


def run_pipeline(dataset_dir, cfg: PipelineConfig, out_dir,
                 write_grids: bool = False) -> dict:
    """Process every frame of a dataset and write outputs plus a report.

    Frames that fail to parse or process are skipped with a diagnostic;
    the report carries per-stage mean milliseconds and, when the dataset
    ships ground truth, detection metrics and corridor IOU.
    """
    dataset_dir = Path(dataset_dir)
    out_dir = Path(out_dir)
    hdmap = frameio.read_map(dataset_dir / "map.json")
    frame_dirs = sorted((dataset_dir / "frames").iterdir())
    stage_ms = {name: [] for name in (*STAGES, "io")}
    frame_reports = []
    detection_stats = []
    ious = []
    skipped = 0
    for fdir in frame_dirs:
        if not fdir.is_dir():
            continue
        try:
            t0 = time.perf_counter()
            frame = read_frame_dir(fdir, cfg.cameras)
            io_s = time.perf_counter() - t0
            result = process_frame(frame, hdmap, cfg)
        except Exception as exc:   # noqa: BLE001 - skip-and-report boundary
            log.warning("frame %s skipped: %s", fdir.name, exc)
            skipped += 1
            continue
        odir = out_dir / "frames" / fdir.name
        odir.mkdir(parents=True, exist_ok=True)
        frameio.write_space(odir / "space.csv", result.space)
        frameio.write_objects(odir / "objects.csv", result.fused,
                              result.contexts)
        frameio.write_clusters(odir / "clusters.csv", result.orig_indices,
                               result.cluster_labels_full)
        if write_grids:
            frameio.write_grid_pgm(odir / "grid.pgm", result.grid)
        for name in STAGES:
            stage_ms[name].append(1e3 * result.timings[name])
        stage_ms["io"].append(1e3 * io_s)
        frame_reports.append({"frame": fdir.name, "n_input": result.n_input,
                              "n_clusters": len(result.clusters.clusters)})
        truth_dir = dataset_dir / "truth" / fdir.name
        if truth_dir.exists():
            stats, iou = _score_frame(result, truth_dir, hdmap, cfg)
            detection_stats.append(stats)
            if iou is not None:
                ious.append(iou)

    report = {
        "frames": len(frame_reports),
        "skipped": skipped,
        "ms_per_frame": {k: float(np.mean(v)) if v else None
                         for k, v in stage_ms.items()},
        "pipeline_ms_per_frame": float(np.sum(
            [np.mean(v) for k, v in stage_ms.items()
             if k != "io" and v])) if frame_reports else None,
        "per_frame": frame_reports,
        "mr_pct": None,
        "far_pct": None,
        "iou": None,
    }
    if detection_stats:
        metrics = compute_detection_metrics(detection_stats)
        report["mr_pct"] = metrics.mr_pct
        report["far_pct"] = metrics.far_pct
    if ious:
        report["iou"] = float(np.mean(ious))
    out_dir.mkdir(parents=True, exist_ok=True)
    frameio.write_report(out_dir / "report.json", report)
    return report


def _score_frame(result: FrameResult, truth_dir: Path, hdmap: HdMap,
                 cfg: PipelineConfig):
    from .drivable import drivable_iou
    from .oracle import truth_free_space

    labels = frameio.read_truth_labels(truth_dir / "labels_lidar0.csv")
    boxes = frameio.read_truth_objects(truth_dir / "objects.csv")
    member_labels = labels[result.orig_indices]
    stats = evaluate_frame(result.clusters, member_labels, labels,
                           _truth_xy(truth_dir, labels),
                           cfg.eval.match_dist)
    iou = None
    if result.space is not None:
        ego = EgoState(width=cfg.ego.width, velocity=result.ego_velocity,
                       decel=cfg.ego.decel)
        truth_space = truth_free_space(boxes, hdmap, ego, cfg.safety.rules,
                                       cfg.safety.resolution,
                                       cfg.safety.x_max)
        iou = drivable_iou(result.space, truth_space)
    return stats, iou


def _truth_xy(truth_dir: Path, labels: np.ndarray) -> np.ndarray:
    cloud_file = truth_dir.parent.parent / "frames" / truth_dir.name \
        / "cloud_lidar0.csv"
    cloud = frameio.read_cloud(cloud_file, "lidar0")
    return cloud.xyz[:, :2]
