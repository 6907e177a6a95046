"""Command-line entry points: run the pipeline, synthesize data, evaluate.

    perceive run   --dataset DIR --config FILE --out DIR [--grids]
    perceive synth --spec FILE --out DIR [--seed N]
    perceive eval  --pred DIR --truth DIR --report FILE [--config FILE]
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import frameio
from .config import default_config, load_config
from .drivable import EgoState, drivable_iou
from .metrics import compute_detection_metrics, evaluate_frame
from .oracle import truth_free_space
from .pipeline import run_pipeline
from .synth import BoxSpec, SceneSpec, generate_scene, sample_scene

log = logging.getLogger("drivespace")


def _cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else default_config()
    report = run_pipeline(args.dataset, cfg, args.out, write_grids=args.grids)
    print(json.dumps({k: report[k] for k in
                      ("frames", "skipped", "mr_pct", "far_pct", "iou",
                       "pipeline_ms_per_frame")}, indent=2))
    total = report["frames"] + report["skipped"]
    if total and report["skipped"] > 0.1 * total:
        log.error("%d of %d frames skipped", report["skipped"], total)
        return 1
    return 0


def _scene_from_spec_file(data: dict, index: int, seed: int) -> SceneSpec:
    kind = data.get("kind", "fixed")
    if kind != "fixed":
        return sample_scene(kind, seed)
    fields = dict(data.get("scene", {}))
    fields["seed"] = seed
    objects = [BoxSpec(**obj) for obj in data.get("objects", [])]
    return SceneSpec(objects=objects, **fields)


def _cmd_synth(args) -> int:
    data = yaml.safe_load(Path(args.spec).read_text()) or {}
    n_frames = int(data.get("n_frames", 1))
    base_seed = int(args.seed if args.seed is not None
                    else data.get("seed", 0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hdmap = None
    for i in range(n_frames):
        spec = _scene_from_spec_file(data, i, base_seed + i)
        scene = generate_scene(spec)
        frameio.write_scene_frame(out, f"{i:06d}", scene)
        if hdmap is None:
            hdmap = scene.hdmap
            frameio.write_map(out / "map.json", hdmap)
    meta = {"n_frames": n_frames, "seed": base_seed,
            "kind": data.get("kind", "fixed")}
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    print(f"wrote {n_frames} frame(s) to {out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config) if args.config else default_config()
    truth_root = Path(args.truth)
    pred_root = Path(args.pred)
    hdmap = frameio.read_map(truth_root / "map.json")
    stats, ious = [], []
    for tdir in sorted((truth_root / "truth").iterdir()):
        pdir = pred_root / "frames" / tdir.name
        if not pdir.exists():
            continue
        labels = frameio.read_truth_labels(tdir / "labels_lidar0.csv")
        boxes = frameio.read_truth_objects(tdir / "objects.csv")
        cloud = frameio.read_cloud(
            truth_root / "frames" / tdir.name / "cloud_lidar0.csv", "lidar0")
        orig_idx, cluster_ids = frameio.read_clusters(pdir / "clusters.csv")
        cset = _cluster_set_from_files(cloud, orig_idx, cluster_ids)
        stats.append(evaluate_frame(cset, labels[orig_idx], labels,
                                    cloud.xyz[:, :2], cfg.eval.match_dist))
        space_mask = _space_mask_from_file(pdir / "space.csv", hdmap, cfg)
        odometry = frameio.read_pose(
            truth_root / "frames" / tdir.name / "pose.csv")
        ego = EgoState(width=cfg.ego.width,
                       velocity=max(odometry[0].velocity, 0.0),
                       decel=cfg.ego.decel)
        truth = truth_free_space(boxes, hdmap, ego, cfg.safety.rules,
                                 cfg.safety.resolution, cfg.safety.x_max)
        ious.append(drivable_iou(space_mask, truth.to_free_mask()))
    metrics = compute_detection_metrics(stats)
    report = {"frames": len(stats), "mr_pct": metrics.mr_pct,
              "far_pct": metrics.far_pct,
              "iou": float(np.mean(ious)) if ious else None}
    frameio.write_report(args.report, report)
    print(json.dumps(report, indent=2))
    return 0


def _cluster_set_from_files(cloud, orig_idx, cluster_ids):
    from .clustering import ClusterSet
    xyz = cloud.xyz[orig_idx]
    return ClusterSet.from_labels(xyz, cluster_ids)


def _space_mask_from_file(path, hdmap, cfg):
    from .drivable import DrivableSpace, grid_spec_from_map
    x0, y0, nx, ny = grid_spec_from_map(hdmap, cfg.safety.resolution,
                                        cfg.safety.x_max)
    stations, left, right = frameio.read_space(path)
    space = DrivableSpace(stations, left, right, x0, y0,
                          cfg.safety.resolution, (nx, ny))
    return space.to_free_mask()


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(
        prog="perceive",
        description="All-weather drivable-space perception pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="process a dataset")
    p_run.add_argument("--dataset", required=True)
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--grids", action="store_true",
                       help="also write grid.pgm rasters")
    p_run.set_defaults(func=_cmd_run)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--spec", required=True)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.set_defaults(func=_cmd_synth)

    p_eval = sub.add_parser("eval", help="score predictions against truth")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--report", required=True)
    p_eval.add_argument("--config", default=None)
    p_eval.set_defaults(func=_cmd_eval)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
