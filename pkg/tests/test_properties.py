"""Cross-module invariants checked with randomized inputs."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from drivespace.cloud import PointCloud, voxel_downsample
from drivespace.clustering import ScanPattern, eps_at, min_pts_at, \
    points_per_line
from drivespace.fusion import DepthEstimate, fuse_depth


@st.composite
def scan_patterns(draw):
    voxel = draw(st.floats(0.03, 0.3))
    return ScanPattern(
        d_phi=draw(st.floats(1e-4, 0.02)),
        d_alpha=draw(st.floats(1e-4, 0.02)),
        voxel=voxel,
        w_min=draw(st.floats(voxel, 1.5)),
        h_min=draw(st.floats(0.05, 2.0)),
    )


@settings(max_examples=100, deadline=None)
@given(scan_patterns())
def test_adaptive_parameters_monotone(pattern):
    s = np.linspace(0.0, 200.0, 201)
    eps = np.array([eps_at(v, pattern) for v in s])
    mp = np.array([min_pts_at(v, pattern) for v in s])
    assert np.all(eps >= pattern.w_min)
    assert np.all(np.diff(eps) >= -1e-12)
    assert np.all(np.diff(mp) <= 0)
    assert np.all(mp >= points_per_line(0.0, pattern))


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 80.0), st.floats(1.0, 80.0),
       st.floats(1e-3, 50.0), st.floats(1e-3, 50.0))
def test_fusion_bounds(z_a, z_b, var_a, var_b):
    fused = fuse_depth(DepthEstimate(z_a, var_a, "width"),
                       DepthEstimate(z_b, var_b, "height"))
    assert min(z_a, z_b) - 1e-9 <= fused.z <= max(z_a, z_b) + 1e-9
    assert fused.var <= min(var_a, var_b) + 1e-12
    # Inverse-variance weighting is symmetric in its arguments.
    swapped = fuse_depth(DepthEstimate(z_b, var_b, "height"),
                         DepthEstimate(z_a, var_a, "width"))
    assert abs(fused.z - swapped.z) < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_voxel_downsample_idempotent(seed, voxel):
    rng = np.random.default_rng(seed)
    cloud = PointCloud.from_arrays(rng.uniform(-8, 8, size=(200, 3)))
    once = voxel_downsample(cloud, voxel)
    twice = voxel_downsample(once, voxel)
    np.testing.assert_array_equal(once.xyz, twice.xyz)
