"""Rigid-body transforms and timestamped pose interpolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

# Rotation matrices must satisfy R^T R = I to this tolerance and det(R) = +1.
ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform applying ``p_out = rotation @ p_in + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        tra = np.asarray(self.translation, dtype=float).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(tra)):
            raise ValueError("transform contains non-finite values")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > ORTHONORMAL_TOL:
            raise ValueError(f"rotation not orthonormal (|R^T R - I| = {err:.3e})")
        if abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise ValueError("rotation must be proper (det = +1)")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quat(cls, qx, qy, qz, qw, translation) -> "RigidTransform":
        """Build from an (x, y, z, w) quaternion; normalizes before use."""
        rot = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
        return cls(rot, np.asarray(translation, dtype=float))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotation about +z by ``yaw`` radians."""
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(rot, np.asarray(translation, dtype=float))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rot_inv = self.rotation.T
        return RigidTransform(rot_inv, -rot_inv @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return the transform equivalent to applying ``other`` first, then self."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def yaw(self) -> float:
        """Heading angle of the rotated x axis in the xy plane."""
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))


class PoseInterpolator:
    """Interpolates vehicle poses between timestamped odometry samples.

    Translation is interpolated linearly, rotation by slerp. Timestamps are
    int64 nanoseconds and are re-based internally so float64 keeps sub-ns
    resolution.
    """

    def __init__(self, times_ns: np.ndarray, transforms: list[RigidTransform]):
        times = np.asarray(times_ns, dtype=np.int64)
        if times.ndim != 1 or len(times) != len(transforms):
            raise ValueError("times and transforms must have equal length")
        if len(times) < 2:
            raise ValueError("need at least 2 odometry samples to interpolate")
        if np.any(np.diff(times) <= 0):
            raise ValueError("odometry timestamps must be strictly increasing")
        self._t0 = times[0]
        self._rel = (times - self._t0).astype(float)
        self._translations = np.stack([t.translation for t in transforms])
        self._slerp = Slerp(self._rel, Rotation.from_matrix(
            np.stack([t.rotation for t in transforms])))

    @property
    def t_min(self) -> int:
        return int(self._t0)

    @property
    def t_max(self) -> int:
        return int(self._t0 + np.int64(self._rel[-1]))

    def covers(self, t_ns: np.ndarray) -> bool:
        t = np.asarray(t_ns, dtype=np.int64)
        return bool(t.size == 0 or (t.min() >= self.t_min and t.max() <= self.t_max))

    def rotations_at(self, t_ns: np.ndarray) -> Rotation:
        rel = (np.asarray(t_ns, dtype=np.int64) - self._t0).astype(float)
        return self._slerp(rel)

    def translations_at(self, t_ns: np.ndarray) -> np.ndarray:
        rel = (np.asarray(t_ns, dtype=np.int64) - self._t0).astype(float)
        out = np.empty((rel.size, 3))
        for k in range(3):
            out[:, k] = np.interp(rel, self._rel, self._translations[:, k])
        return out

    def pose_at(self, t_ns: int) -> RigidTransform:
        if not self.covers(np.asarray([t_ns])):
            raise ValueError(f"time {t_ns} outside odometry span "
                             f"[{self.t_min}, {self.t_max}]")
        rot = self.rotations_at(np.asarray([t_ns])).as_matrix()[0]
        tra = self.translations_at(np.asarray([t_ns]))[0]
        return RigidTransform(rot, tra)
