"""Perfect-perception reference corridor from ground-truth boxes.

Feeds exact object footprints, classes and contexts through the same
occupancy/expansion/extraction machinery the pipeline uses, isolating
perception error when comparing corridors.
"""

from __future__ import annotations

import numpy as np

from .clustering import Cluster
from .drivable import (DrivableSpace, EgoState, build_occupancy,
                       classify_road_context, expand_safety, extract_boundary)
from .fusion import FusedObject
from .hdmap import HdMap


def boxes_as_fused(boxes: list) -> tuple:
    """Ground-truth boxes as fused objects plus their exact footprints."""
    objects, footprints = [], []
    for box in boxes:
        hx, hy = box.length / 2, box.width / 2
        poly = np.array([[box.x - hx, box.y - hy], [box.x + hx, box.y - hy],
                         [box.x + hx, box.y + hy], [box.x - hx, box.y + hy]])
        pts = np.column_stack([poly, np.zeros(4)])
        cluster = Cluster(0, np.arange(4), pts, pts.mean(axis=0),
                          pts.min(axis=0), pts.max(axis=0))
        objects.append(FusedObject(cluster, box.label))
        footprints.append(poly)
    return objects, footprints


def truth_free_space(boxes: list, hdmap: HdMap, ego: EgoState, rules: dict,
                     resolution: float = 0.1,
                     x_max: float = 60.0) -> DrivableSpace:
    """Corridor a perfect perception system would extract."""
    objects, footprints = boxes_as_fused(boxes)
    contexts = classify_road_context(objects, hdmap)
    grid = build_occupancy(objects, None, None, hdmap, resolution,
                           x_max=x_max, footprints=footprints)
    grid = expand_safety(grid, objects, contexts, rules, ego, hdmap,
                         footprints=footprints)
    return extract_boundary(grid, ego)


def map_only_free_space(hdmap: HdMap, ego: EgoState,
                        resolution: float = 0.1,
                        x_max: float = 60.0) -> DrivableSpace:
    """Baseline corridor from the map alone, objects ignored."""
    grid = build_occupancy([], None, None, hdmap, resolution, x_max=x_max)
    return extract_boundary(grid, ego)
