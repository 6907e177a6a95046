"""File formats: frame directories, map JSON, outputs, and reports.

A dataset is a root directory with ``map.json`` and per-timestamp frame
directories under ``frames/``; synthetic datasets add per-frame ground
truth under ``truth/``. Pipeline runs mirror the frame layout under their
output root next to ``report.json``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .cloud import OdometrySample, PointCloud
from .fusion import Detection2D
from .hdmap import HdMap
from .synth import BoxSpec, SceneFrame
from .transforms import RigidTransform

CLOUD_COLUMNS = ["x", "y", "z", "intensity", "ring", "t_ns"]
POSE_COLUMNS = ["t_ns", "qx", "qy", "qz", "qw", "tx", "ty", "tz", "v"]
DETECTION_COLUMNS = ["class", "x_min", "y_min", "x_max", "y_max", "score"]
LANE_COLUMNS = ["lane_id", "u", "v"]


# ------------------------------------------------------------------ map

def write_map(path, hdmap: HdMap):
    data = {
        "left_boundary": hdmap.left_boundary.tolist(),
        "right_boundary": hdmap.right_boundary.tolist(),
        "centerline": hdmap.centerline.tolist(),
        "crosswalks": [p.tolist() for p in hdmap.crosswalks],
        "sidewalks": [p.tolist() for p in hdmap.sidewalk_regions],
        "lane_width": hdmap.lane_width,
    }
    Path(path).write_text(json.dumps(data))


def read_map(path) -> HdMap:
    data = json.loads(Path(path).read_text())
    return HdMap(left_boundary=np.asarray(data["left_boundary"]),
                 right_boundary=np.asarray(data["right_boundary"]),
                 centerline=np.asarray(data["centerline"]),
                 crosswalks=[np.asarray(p) for p in data.get("crosswalks", [])],
                 sidewalk_regions=[np.asarray(p)
                                   for p in data.get("sidewalks", [])],
                 lane_width=float(data.get("lane_width", 4.0)))


# ---------------------------------------------------------------- frames

def write_cloud(path, cloud: PointCloud):
    df = pd.DataFrame({"x": cloud.xyz[:, 0], "y": cloud.xyz[:, 1],
                       "z": cloud.xyz[:, 2], "intensity": cloud.intensity,
                       "ring": cloud.ring, "t_ns": cloud.t_ns})
    df.to_csv(path, index=False)


def read_cloud(path, frame_id: str) -> PointCloud:
    df = pd.read_csv(path)
    missing = [c for c in CLOUD_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing cloud columns {missing}")
    return PointCloud(df[["x", "y", "z"]].to_numpy(float),
                      df["intensity"].to_numpy(float),
                      df["ring"].to_numpy(np.int32),
                      df["t_ns"].to_numpy(np.int64), frame_id)


def write_pose(path, odometry: list):
    rows = []
    for s in odometry:
        from scipy.spatial.transform import Rotation
        q = Rotation.from_matrix(s.pose.rotation).as_quat()
        rows.append([s.timestamp, *q, *s.pose.translation, s.velocity])
    pd.DataFrame(rows, columns=POSE_COLUMNS).to_csv(path, index=False)


def read_pose(path) -> list:
    df = pd.read_csv(path)
    out = []
    for row in df.itertuples(index=False):
        pose = RigidTransform.from_quat(row.qx, row.qy, row.qz, row.qw,
                                        (row.tx, row.ty, row.tz))
        out.append(OdometrySample(int(row.t_ns), pose, float(row.v)))
    return out


def write_detections(path, detections: list):
    rows = [[d.label, d.x_min, d.y_min, d.x_max, d.y_max, d.score]
            for d in detections]
    pd.DataFrame(rows, columns=DETECTION_COLUMNS).to_csv(path, index=False)


def read_detections(path) -> list:
    df = pd.read_csv(path)
    return [Detection2D(str(r[0]), float(r[1]), float(r[2]), float(r[3]),
                        float(r[4]), float(r[5]))
            for r in df.itertuples(index=False)]


def write_lanes(path, pixels: np.ndarray):
    pd.DataFrame(np.asarray(pixels).reshape(-1, 3),
                 columns=LANE_COLUMNS).to_csv(path, index=False)


def read_lanes(path) -> np.ndarray:
    return pd.read_csv(path)[LANE_COLUMNS].to_numpy(float)


# ----------------------------------------------------------- ground truth

def write_truth(frame_dir: Path, scene: SceneFrame):
    frame_dir.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"label": scene.labels}).to_csv(frame_dir / "labels_lidar0.csv",
                                                 index=False)
    rows = [[k + 1, b.label, b.x, b.y, b.length, b.width, b.height]
            for k, b in enumerate(scene.spec.objects)]
    pd.DataFrame(rows, columns=["id", "class", "x", "y", "length", "width",
                                "height"]).to_csv(frame_dir / "objects.csv",
                                                  index=False)


def read_truth_labels(path) -> np.ndarray:
    return pd.read_csv(path)["label"].to_numpy(np.int64)


def read_truth_objects(path) -> list:
    df = pd.read_csv(path)
    return [BoxSpec(str(row["class"]), float(row["x"]), float(row["y"]),
                    float(row["length"]), float(row["width"]),
                    float(row["height"]))
            for _, row in df.iterrows()]


def write_scene_frame(root: Path, frame_id: str, scene: SceneFrame):
    """Write one synthetic frame in the dataset layout."""
    fdir = Path(root) / "frames" / frame_id
    fdir.mkdir(parents=True, exist_ok=True)
    write_cloud(fdir / "cloud_lidar0.csv", scene.cloud)
    write_pose(fdir / "pose.csv", scene.odometry)
    for name, dets in scene.detections.items():
        write_detections(fdir / f"detections_{name}.csv", dets)
    for name, px in scene.lane_pixels.items():
        write_lanes(fdir / f"lanes_{name}.csv", px)
    write_truth(Path(root) / "truth" / frame_id, scene)


# ---------------------------------------------------------------- outputs

def write_space(path, space):
    rows = []
    for s, y in zip(space.stations, space.left):
        rows.append(["left", s, y])
    for s, y in zip(space.stations, space.right):
        rows.append(["right", s, y])
    pd.DataFrame(rows, columns=["side", "station_m", "lateral_m"]) \
        .to_csv(path, index=False)


def read_space(path):
    df = pd.read_csv(path)
    left = df[df["side"] == "left"].sort_values("station_m")
    right = df[df["side"] == "right"].sort_values("station_m")
    return (left["station_m"].to_numpy(float), left["lateral_m"].to_numpy(float),
            right["lateral_m"].to_numpy(float))


def write_objects(path, fused: list, contexts: list):
    rows = []
    for k, (obj, ctx) in enumerate(zip(fused, contexts)):
        x, y = obj.position
        rows.append([k, obj.label, ctx.value, x, y,
                     obj.cost if obj.cost is not None else ""])
    pd.DataFrame(rows, columns=["id", "class", "context", "x", "y", "cost"]) \
        .to_csv(path, index=False)


def write_clusters(path, orig_indices: np.ndarray, labels: np.ndarray):
    pd.DataFrame({"orig_index": orig_indices, "cluster_id": labels}) \
        .to_csv(path, index=False)


def read_clusters(path):
    df = pd.read_csv(path)
    return df["orig_index"].to_numpy(np.int64), \
        df["cluster_id"].to_numpy(np.int64)


def write_grid_pgm(path, grid):
    """Binary raster for quick visual inspection (free = white)."""
    img = np.where(grid.occupied.T[::-1], 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def write_report(path, report: dict):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())
