"""Point-cloud containers and per-frame preprocessing operations.

Clouds are stored as column arrays rather than per-point objects so that a
full frame (~100k returns) can be cropped, deskewed and downsampled within
the real-time budget. The vehicle frame is right-handed with x forward,
y left, z up, origin at the LiDAR reference, so flat ground sits near
z = -h_lidar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transforms import PoseInterpolator, RigidTransform


@dataclass(frozen=True)
class LidarPoint:
    """A single LiDAR return (meters, [0, 255] intensity, ns timestamp)."""

    x: float
    y: float
    z: float
    intensity: float
    ring: int
    timestamp: int


@dataclass
class PointCloud:
    """Ordered set of LiDAR returns sharing one coordinate frame."""

    xyz: np.ndarray
    intensity: np.ndarray
    ring: np.ndarray
    t_ns: np.ndarray
    frame_id: str = "sensor"

    def __post_init__(self):
        self.xyz = np.ascontiguousarray(self.xyz, dtype=float).reshape(-1, 3)
        n = len(self.xyz)
        self.intensity = np.asarray(self.intensity, dtype=float).reshape(n)
        self.ring = np.asarray(self.ring, dtype=np.int32).reshape(n)
        self.t_ns = np.asarray(self.t_ns, dtype=np.int64).reshape(n)
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return len(self.xyz)

    def point(self, i: int) -> LidarPoint:
        return LidarPoint(*self.xyz[i], float(self.intensity[i]),
                          int(self.ring[i]), int(self.t_ns[i]))

    @classmethod
    def empty(cls, frame_id: str = "sensor") -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0, np.int32),
                   np.zeros(0, np.int64), frame_id)

    @classmethod
    def from_arrays(cls, xyz, intensity=None, ring=None, t_ns=None,
                    frame_id: str = "sensor") -> "PointCloud":
        xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
        n = len(xyz)
        return cls(
            xyz,
            np.zeros(n) if intensity is None else intensity,
            np.zeros(n, np.int32) if ring is None else ring,
            np.zeros(n, np.int64) if t_ns is None else t_ns,
            frame_id,
        )

    def take(self, indices: np.ndarray) -> "PointCloud":
        """Subset preserving the order of ``indices``."""
        idx = np.asarray(indices)
        return PointCloud(self.xyz[idx], self.intensity[idx], self.ring[idx],
                          self.t_ns[idx], self.frame_id)

    def with_xyz(self, xyz: np.ndarray, frame_id: str | None = None) -> "PointCloud":
        """Copy with replaced coordinates; intensity/ring/timestamp kept."""
        return PointCloud(xyz, self.intensity.copy(), self.ring.copy(),
                          self.t_ns.copy(),
                          self.frame_id if frame_id is None else frame_id)


@dataclass(frozen=True)
class OdometrySample:
    """Vehicle pose (vehicle -> world) and forward speed at one instant."""

    timestamp: int
    pose: RigidTransform
    velocity: float = 0.0


def interpolator_from_odometry(odometry: list[OdometrySample]) -> PoseInterpolator:
    times = np.asarray([s.timestamp for s in odometry], dtype=np.int64)
    return PoseInterpolator(times, [s.pose for s in odometry])


def concatenate_clouds(clouds: list[PointCloud],
                       extrinsics: list[RigidTransform],
                       frame_id: str = "base") -> PointCloud:
    """Merge per-sensor clouds into one cloud in the shared frame.

    Each cloud is transformed by its sensor extrinsic; intensity, ring and
    timestamps pass through untouched and input order is preserved.
    """
    if len(clouds) != len(extrinsics):
        raise ValueError(f"{len(clouds)} clouds but {len(extrinsics)} extrinsics")
    if not clouds:
        raise ValueError("need at least one cloud")
    parts = [ext.apply(c.xyz) for c, ext in zip(clouds, extrinsics)]
    return PointCloud(
        np.concatenate(parts, axis=0),
        np.concatenate([c.intensity for c in clouds]),
        np.concatenate([c.ring for c in clouds]),
        np.concatenate([c.t_ns for c in clouds]),
        frame_id,
    )


def motion_compensate(cloud: PointCloud, odometry: list[OdometrySample],
                      reference_time: int) -> PointCloud:
    """De-skew a scan: re-express every point in the pose at ``reference_time``.

    Odometry must bracket every point timestamp and the reference time;
    poses between samples are interpolated (linear translation, slerp
    rotation). Point count and ordering are preserved.
    """
    if len(cloud) == 0:
        return cloud.with_xyz(cloud.xyz.copy())
    interp = interpolator_from_odometry(odometry)
    if not interp.covers(cloud.t_ns):
        raise ValueError(
            f"odometry [{interp.t_min}, {interp.t_max}] does not bracket point "
            f"timestamps [{cloud.t_ns.min()}, {cloud.t_ns.max()}]")
    if _constant_pose(odometry):
        return cloud.with_xyz(cloud.xyz.copy())
    ref = interp.pose_at(reference_time)
    world = interp.rotations_at(cloud.t_ns).apply(cloud.xyz) \
        + interp.translations_at(cloud.t_ns)
    local = (world - ref.translation) @ ref.rotation
    return cloud.with_xyz(local)


def _constant_pose(odometry: list[OdometrySample]) -> bool:
    first = odometry[0].pose
    return all(np.array_equal(s.pose.rotation, first.rotation)
               and np.array_equal(s.pose.translation, first.translation)
               for s in odometry[1:])


def voxel_downsample_indices(cloud: PointCloud, voxel: float) -> np.ndarray:
    """Indices of the representative point per occupied voxel, ascending.

    The representative is the input point nearest its voxel's centroid
    (ties resolved to the smallest input index), which keeps the original
    ring/timestamp valid.
    """
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    n = len(cloud)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    cells = np.floor(cloud.xyz / voxel).astype(np.int64)
    cells -= cells.min(axis=0)
    dims = cells.max(axis=0) + 1
    lin = np.ravel_multi_index((cells[:, 0], cells[:, 1], cells[:, 2]), dims)
    order = np.argsort(lin, kind="stable")
    sorted_lin = lin[order]
    group_starts = np.flatnonzero(
        np.concatenate([[True], np.diff(sorted_lin) != 0]))
    counts = np.diff(np.append(group_starts, n))
    xyz_sorted = cloud.xyz[order]
    centroid = np.add.reduceat(xyz_sorted, group_starts) / counts[:, None]
    d2 = np.square(xyz_sorted - np.repeat(centroid, counts, axis=0)).sum(axis=1)
    # Group-wise argmin of d2. The stable sort keeps members in original
    # index order, so the first member attaining the group minimum is also
    # the smallest-index tie winner.
    group_min = np.repeat(np.minimum.reduceat(d2, group_starts), counts)
    pos = np.flatnonzero(d2 == group_min)
    gid = np.repeat(np.arange(len(group_starts)), counts)[pos]
    _, first = np.unique(gid, return_index=True)
    reps = order[pos[first]]
    reps.sort()
    return reps


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """Keep at most one representative input point per ``voxel``-sized cell."""
    return cloud.take(voxel_downsample_indices(cloud, voxel))
