"""Detection metrics: miss rate and false alarm rate against labeled truth.

A ground-truth object counts as detected when some cluster centroid lies
within the match distance and that cluster's members are majority the
object's own points. A cluster is a false alarm when the majority of its
members carry NOISE or GROUND truth labels. The false-alarm denominator is
the dataset-wide cluster count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterSet
from .synth import GROUND_LABEL, NOISE_LABEL


@dataclass
class FrameStats:
    """Per-frame tallies feeding the dataset-level rates."""

    n_objects: int
    missed: list
    n_clusters: int
    n_false: int


@dataclass
class DetectionMetrics:
    mr_pct: float
    far_pct: float
    n_objects: int
    n_missed: int
    n_clusters: int
    n_false: int
    per_frame: list = field(default_factory=list)


def evaluate_frame(clusters: ClusterSet, member_labels: np.ndarray,
                   truth_labels: np.ndarray, truth_xy: np.ndarray,
                   match_dist: float = 1.0) -> FrameStats:
    """Score one frame's clusters against per-point truth labels.

    ``member_labels`` holds the truth label of every clustered point;
    ``truth_labels``/``truth_xy`` describe the full generated cloud, from
    which object centroids are taken.
    """
    if match_dist <= 0:
        raise ValueError("match_dist must be positive")
    member_labels = np.asarray(member_labels)
    truth_labels = np.asarray(truth_labels)
    object_ids = np.unique(truth_labels[truth_labels > 0])
    centroids = {int(k): truth_xy[truth_labels == k].mean(axis=0)
                 for k in object_ids}

    majority = {}
    n_false = 0
    for c in clusters.clusters:
        labs = member_labels[c.indices]
        clutter = np.count_nonzero((labs == NOISE_LABEL)
                                   | (labs == GROUND_LABEL))
        if clutter > len(labs) / 2:
            n_false += 1
            continue
        ids, counts = np.unique(labs[labs > 0], return_counts=True)
        if len(ids) and counts.max() > len(labs) / 2:
            majority[c.label] = (int(ids[counts.argmax()]),
                                 c.centroid[:2])

    missed = []
    for k in object_ids:
        hit = any(obj_id == k
                  and np.linalg.norm(cen - centroids[int(k)]) <= match_dist
                  for obj_id, cen in majority.values())
        if not hit:
            missed.append(int(k))
    return FrameStats(len(object_ids), missed, len(clusters.clusters), n_false)


def compute_detection_metrics(frames: list) -> DetectionMetrics:
    """Aggregate per-frame stats into dataset-level MR / FAR percentages."""
    n_obj = sum(f.n_objects for f in frames)
    n_missed = sum(len(f.missed) for f in frames)
    n_clusters = sum(f.n_clusters for f in frames)
    n_false = sum(f.n_false for f in frames)
    mr = 100.0 * n_missed / n_obj if n_obj else 0.0
    far = 100.0 * n_false / n_clusters if n_clusters else 0.0
    return DetectionMetrics(mr, far, n_obj, n_missed, n_clusters, n_false,
                            per_frame=list(frames))
