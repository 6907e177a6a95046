#!/usr/bin/env python3
"""Corridor IOU against the perfect-perception reference on sunny scenes.

Prints per-frame IOU for the pipeline and for the map-only baseline that
ignores objects, mirroring the drivable-space evaluation protocol.
"""

import argparse

import numpy as np

from drivespace.config import default_config
from drivespace.drivable import EgoState, drivable_iou
from drivespace.oracle import map_only_free_space, truth_free_space
from drivespace.pipeline import process_frame, scene_to_frame
from drivespace.synth import generate_scene, sunny_scene


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames", type=int, default=20)
    args = parser.parse_args()
    cfg = default_config()
    ego = EgoState(width=cfg.ego.width, velocity=0.0, decel=cfg.ego.decel)
    ours, base = [], []
    print(f"{'seed':>5} {'objects':>8} {'pipeline':>9} {'map-only':>9}")
    for seed in range(args.frames):
        spec = sunny_scene(seed)
        scene = generate_scene(spec)
        result = process_frame(scene_to_frame(scene), scene.hdmap, cfg)
        truth = truth_free_space(spec.objects, scene.hdmap, ego,
                                 cfg.safety.rules, cfg.safety.resolution,
                                 cfg.safety.x_max)
        baseline = map_only_free_space(scene.hdmap, ego,
                                       cfg.safety.resolution, cfg.safety.x_max)
        iou = drivable_iou(result.space, truth)
        biou = drivable_iou(baseline, truth)
        ours.append(iou)
        base.append(biou)
        print(f"{seed:>5} {len(spec.objects):>8} {iou:9.3f} {biou:9.3f}")
    print(f"\nmean pipeline IOU {np.mean(ours):.3f}   "
          f"mean map-only IOU {np.mean(base):.3f}")


if __name__ == "__main__":
    main()
