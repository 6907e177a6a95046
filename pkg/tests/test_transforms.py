import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivespace.transforms import PoseInterpolator, RigidTransform


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def test_identity_apply():
    t = RigidTransform.identity()
    pts = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    np.testing.assert_array_equal(t.apply(pts), pts)


def test_rejects_non_orthonormal():
    bad = np.eye(3)
    bad[0, 1] = 1e-3
    with pytest.raises(ValueError):
        RigidTransform(bad, np.zeros(3))


def test_rejects_reflection():
    refl = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        RigidTransform(refl, np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_within_1e9(seed):
    rng = np.random.default_rng(seed)
    t = RigidTransform(random_rotation(rng), rng.normal(scale=10.0, size=3))
    pts = rng.normal(scale=50.0, size=(32, 3))
    back = t.inverse().apply(t.apply(pts))
    assert np.abs(back - pts).max() < 1e-9


def test_compose_matches_sequential_apply():
    rng = np.random.default_rng(7)
    a = RigidTransform(random_rotation(rng), rng.normal(size=3))
    b = RigidTransform(random_rotation(rng), rng.normal(size=3))
    pts = rng.normal(size=(10, 3))
    np.testing.assert_allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)),
                               atol=1e-12)


def test_from_yaw():
    t = RigidTransform.from_yaw(np.pi / 2)
    np.testing.assert_allclose(t.apply(np.array([1.0, 0.0, 0.0])),
                               [0.0, 1.0, 0.0], atol=1e-12)


def test_pose_interpolator_linear_translation():
    poses = [RigidTransform.identity(),
             RigidTransform(np.eye(3), np.array([10.0, 0.0, 0.0]))]
    interp = PoseInterpolator(np.array([0, 1_000_000_000]), poses)
    mid = interp.pose_at(500_000_000)
    np.testing.assert_allclose(mid.translation, [5.0, 0.0, 0.0])


def test_pose_interpolator_slerp_rotation():
    poses = [RigidTransform.identity(), RigidTransform.from_yaw(np.pi / 2)]
    interp = PoseInterpolator(np.array([0, 1_000_000_000]), poses)
    mid = interp.pose_at(500_000_000)
    assert mid.yaw() == pytest.approx(np.pi / 4, abs=1e-12)


def test_pose_interpolator_rejects_unsorted():
    poses = [RigidTransform.identity()] * 2
    with pytest.raises(ValueError):
        PoseInterpolator(np.array([5, 5]), poses)


def test_pose_interpolator_out_of_range():
    poses = [RigidTransform.identity()] * 2
    interp = PoseInterpolator(np.array([0, 10]), poses)
    with pytest.raises(ValueError):
        interp.pose_at(11)
