from itertools import permutations

import numpy as np
import pytest

from drivespace.clustering import Cluster
from drivespace.fusion import (BehindCameraError, CameraModel, ClassPrior,
                               Detection2D, assign, association_cost,
                               bbox_iou, camera_position_estimate,
                               default_priors,
                               estimate_depth_height, estimate_depth_width,
                               fuse_depth, fuse_frame, match, project_point,
                               project_vehicle_points)


def make_camera(pitch=0.0, cam_height=2.0, fx=1000.0, fy=1000.0):
    return CameraModel(fx=fx, fy=fy, cx=320.0, cy=240.0, pitch=pitch,
                       cam_height=cam_height, width=640, height=480)


def make_cluster(points) -> Cluster:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return Cluster(0, np.arange(len(pts)), pts, pts.mean(axis=0),
                   pts.min(axis=0), pts.max(axis=0))


def make_prior(width=0.6, width_sd=0.15, height=1.7, height_sd=0.12,
               cam_sd=0.02, wp_sd=4.0, hp_sd=4.0, label="pedestrian"):
    return ClassPrior(label, width, width_sd**2, height, height_sd**2,
                      cam_sd**2, wp_sd**2, hp_sd**2)


# --------------------------------------------------------------- projection

def test_project_optical_axis():
    cam = make_camera()
    assert project_point(cam, (0.0, 0.0, 10.0)) == pytest.approx((320.0, 240.0))


def test_project_pinhole_similar_triangles():
    cam = make_camera()
    x_p, _ = project_point(cam, (1.0, 0.0, 10.0))
    assert x_p == pytest.approx(320.0 + 100.0)


def test_project_rotated_axis_hits_principal_point():
    cam = make_camera(pitch=0.1)
    p = cam.pitch_matrix().T @ np.array([0.0, 0.0, 12.0])
    assert project_point(cam, p) == pytest.approx((320.0, 240.0))


def test_project_behind_camera_raises():
    cam = make_camera()
    with pytest.raises(BehindCameraError):
        project_point(cam, (0.0, 0.0, -5.0))


def test_default_mount_vehicle_axes():
    cam = make_camera()
    pix, scale = project_vehicle_points(cam, np.array([[10.0, 0.0, 0.0]]))
    assert scale[0] == pytest.approx(10.0)
    np.testing.assert_allclose(pix[0], [320.0, 240.0])
    # A point to the vehicle's left lands left of center in the image.
    pix, _ = project_vehicle_points(cam, np.array([[10.0, 1.0, 0.0]]))
    assert pix[0, 0] < 320.0


# ------------------------------------------------------------------- depth

def test_depth_width_theta_zero():
    cam = make_camera()
    det = Detection2D("pedestrian", 270, 150, 370, 350)   # 100 px wide
    est = estimate_depth_width(cam, det, make_prior(width=2.0))
    assert est.z == pytest.approx(20.0)


def test_depth_width_variance_pixel_term_only():
    cam = make_camera()
    det = Detection2D("pedestrian", 270, 150, 370, 350)
    prior = make_prior(width=2.0, width_sd=1e-9, height_sd=1e-9, cam_sd=1e-9,
                       wp_sd=5.0)
    est = estimate_depth_width(cam, det, prior)
    # Hand-evaluated: W_w^2 fx^2 sigma_Wp^2 / W_p^4 = 4e6 * 25 / 1e8.
    assert est.var == pytest.approx(1.0, rel=1e-6)


def test_depth_width_inverse_proportionality():
    cam = make_camera()
    narrow = Detection2D("p", 270, 150, 370, 350)
    wide = Detection2D("p", 220, 150, 420, 350)
    prior = make_prior(width=2.0)
    z1 = estimate_depth_width(cam, narrow, prior).z
    z2 = estimate_depth_width(cam, wide, prior).z
    assert z2 == pytest.approx(z1 / 2.0)


def test_depth_height_theta_zero():
    cam = make_camera()
    det = Detection2D("pedestrian", 300, 200, 340, 285)   # 85 px tall
    est = estimate_depth_height(cam, det, make_prior(height=1.7))
    assert est.z == pytest.approx(20.0)


def test_depth_height_yp_irrelevant_at_theta_zero():
    cam = make_camera()
    prior = make_prior(height=1.7)
    a = estimate_depth_height(cam, Detection2D("p", 300, 100, 340, 185), prior)
    b = estimate_depth_height(cam, Detection2D("p", 300, 300, 340, 385), prior)
    assert a.z == pytest.approx(b.z)


def test_depth_height_variance_pixel_term_only():
    cam = make_camera()
    det = Detection2D("p", 300, 200, 340, 285)
    prior = make_prior(height=1.7, height_sd=1e-9, cam_sd=1e-9, hp_sd=4.0)
    est = estimate_depth_height(cam, det, prior)
    want = 1.7**2 * 1000.0**2 * 16.0 / 85.0**4
    assert est.var == pytest.approx(want, rel=1e-6)


@pytest.mark.parametrize("pitch", [0.0, 0.05, 0.15])
def test_delta_variance_matches_monte_carlo(pitch):
    # Empirical oracle: draw the underlying quantities, push them through
    # independently written closed forms, compare variances within 10%.
    cam = make_camera(pitch=pitch)
    prior = make_prior()
    rng = np.random.default_rng(17)
    n = 200_000
    w_w = rng.normal(prior.width_mean, np.sqrt(prior.width_var), n)
    h_w = rng.normal(prior.height_mean, np.sqrt(prior.height_var), n)
    h_cam = rng.normal(cam.cam_height, np.sqrt(prior.cam_height_var), n)
    w_p = rng.normal(30.0, np.sqrt(prior.wp_var), n)
    h_p = rng.normal(85.0, np.sqrt(prior.hp_var), n)
    cos_t, sin_t = np.cos(pitch), np.sin(pitch)
    tan_t = sin_t / cos_t
    y_w = h_cam - h_w / 2.0
    z_width = cam.fx * w_w / (w_p * cos_t) - y_w * tan_t
    y_p = 240.0
    a = (cam.cy - y_p) * sin_t + cam.fy * cos_t
    z_height = a * h_w / (h_p * cos_t) - y_w * tan_t

    det = Detection2D("pedestrian", 320 - 15, 240 - 42.5, 320 + 15, 240 + 42.5)
    w_est = estimate_depth_width(cam, det, prior)
    h_est = estimate_depth_height(cam, det, prior)
    assert w_est.var == pytest.approx(np.var(z_width), rel=0.10)
    assert h_est.var == pytest.approx(np.var(z_height), rel=0.10)


# ------------------------------------------------------------------ fusion

def test_fuse_both_rejected_is_none():
    assert fuse_depth(None, None) is None


def test_fuse_equal_variances():
    from drivespace.fusion import DepthEstimate
    out = fuse_depth(DepthEstimate(18.0, 2.0, "width"),
                     DepthEstimate(22.0, 2.0, "height"))
    assert out.z == pytest.approx(20.0)
    assert out.var == pytest.approx(1.0)


def test_fuse_infinite_variance_limit():
    from drivespace.fusion import DepthEstimate
    out = fuse_depth(DepthEstimate(18.0, 1e12, "width"),
                     DepthEstimate(22.0, 1.0, "height"))
    assert out.z == pytest.approx(22.0, abs=1e-6)


def test_fuse_hand_evaluated():
    from drivespace.fusion import DepthEstimate
    out = fuse_depth(DepthEstimate(10.0, 1.0, "width"),
                     DepthEstimate(20.0, 4.0, "height"))
    assert out.z == pytest.approx(12.0)
    assert out.var == pytest.approx(0.8)


def test_fuse_rejected_side_passthrough():
    from drivespace.fusion import DepthEstimate
    est = DepthEstimate(15.0, 2.0, "width")
    assert fuse_depth(est, None) is est
    assert fuse_depth(None, est) is est


def test_fusion_bounds_property():
    from drivespace.fusion import DepthEstimate
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = DepthEstimate(rng.uniform(5, 50), rng.uniform(0.1, 9), "width")
        b = DepthEstimate(rng.uniform(5, 50), rng.uniform(0.1, 9), "height")
        f = fuse_depth(a, b)
        assert min(a.z, b.z) - 1e-12 <= f.z <= max(a.z, b.z) + 1e-12
        assert f.var <= min(a.var, b.var) + 1e-12


# -------------------------------------------------------- position estimate

def test_position_on_axis():
    from drivespace.fusion import DepthEstimate
    cam = make_camera()
    det = Detection2D("p", 300, 200, 340, 280)   # centered on the principal point
    pos, cov = camera_position_estimate(cam, det, DepthEstimate(20.0, 1.0, "fused"))
    np.testing.assert_allclose(pos, [20.0, 0.0], atol=1e-9)
    assert np.trace(cov) > 0


def test_position_lateral_offset_similar_triangles():
    from drivespace.fusion import DepthEstimate
    cam = make_camera()
    det = Detection2D("p", 400, 200, 440, 280)   # center 100 px right
    pos, _ = camera_position_estimate(cam, det, DepthEstimate(20.0, 1.0, "fused"))
    assert pos[0] == pytest.approx(20.0)
    assert pos[1] == pytest.approx(-2.0)  # right of center: negative vehicle y


# -------------------------------------------------------------- association

def cluster_and_matching_box(cam, center, half=(0.3, 0.85)):
    """A plate cluster and the detection box equal to its projection."""
    y, z = np.meshgrid(np.linspace(-half[0], half[0], 5),
                       np.linspace(-half[1], half[1], 7))
    pts = np.column_stack([np.full(y.size, center[0]),
                           y.ravel() + center[1], z.ravel() + center[2]])
    cluster = make_cluster(pts)
    pix, _ = project_vehicle_points(cam, pts)
    box = (pix[:, 0].min(), pix[:, 1].min(), pix[:, 0].max(), pix[:, 1].max())
    return cluster, box


def test_cost_perfect_iou_is_zero():
    cam = make_camera()
    cluster, box = cluster_and_matching_box(cam, (15.0, 0.0, -1.0))
    det = Detection2D("pedestrian", *box)
    cost = association_cost(cluster, det, cam, None, delta=1.0)
    assert cost == pytest.approx(0.0, abs=1e-12)


def test_cost_disjoint_boxes_is_one():
    cam = make_camera()
    cluster, _ = cluster_and_matching_box(cam, (15.0, 3.0, -1.0))
    det = Detection2D("pedestrian", 10, 10, 40, 60)
    cost = association_cost(cluster, det, cam, None, delta=1.0)
    assert cost == pytest.approx(1.0)


def test_cost_mahalanobis_hand_computed():
    cam = make_camera()
    cluster = make_cluster([[22.0, 0.0, -1.0]])
    det = Detection2D("pedestrian", 300, 200, 340, 280)
    cost = association_cost(cluster, det, cam, None, delta=0.0,
                            position=np.array([20.0, 0.0]), cov=np.eye(2))
    assert cost == pytest.approx(2.0)


def test_cost_behind_camera_infinite():
    cam = make_camera()
    cluster = make_cluster([[-5.0, 0.0, 0.0]])
    det = Detection2D("pedestrian", 300, 200, 340, 280)
    assert association_cost(cluster, det, cam, None, delta=1.0) == float("inf")


def test_iou_helper():
    assert bbox_iou((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(1.0 / 3.0)


# ----------------------------------------------------------------- matching

def brute_force_min_total(cost):
    """Exhaustive assignment oracle; totals summed in row order."""
    n, m = cost.shape
    if n <= m:
        return min(sum(cost[i, p[i]] for i in range(n))
                   for p in permutations(range(m), n))
    return min(sum(cost[p[j], j] for j in range(m))
               for p in permutations(range(n), m))


def test_match_single_pair_under_gate():
    cam = make_camera()
    cluster, box = cluster_and_matching_box(cam, (15.0, 0.0, -1.0))
    det = Detection2D("pedestrian", *box)
    res = match([cluster], [det], cam, default_priors(), delta=0.5, gate=2.0)
    assert len(res.pairs) == 1
    assert res.pairs[0][:2] == (0, 0)
    assert res.unmatched_clusters == [] and res.unmatched_detections == []


def test_match_gate_removes_expensive_pairs():
    cam = make_camera()
    cluster, _ = cluster_and_matching_box(cam, (15.0, 3.0, -1.0))
    det = Detection2D("pedestrian", 10, 10, 40, 60)
    res = match([cluster], [det], cam, {}, delta=1.0, gate=0.5)
    assert res.pairs == []
    assert res.unmatched_clusters == [0] and res.unmatched_detections == [0]


def test_assign_dominant_diagonal():
    pairs = assign(np.array([[1.0, 10.0], [10.0, 1.0]]))
    assert pairs == [(0, 0), (1, 1)]


@pytest.mark.parametrize("seed", range(12))
def test_assign_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 6, size=2)
    cost = rng.uniform(0, 1, size=(n, m))
    pairs = assign(cost)
    total = sum(cost[i, j] for i, j in pairs)
    assert total == brute_force_min_total(cost)


def test_fuse_frame_unmatched_stays_unknown():
    cam = make_camera()
    near, box = cluster_and_matching_box(cam, (15.0, 0.0, -1.0))
    far = make_cluster([[40.0, 5.0, 0.0], [40.1, 5.0, 0.0]])
    det = Detection2D("pedestrian", *box, score=0.9)
    fused = fuse_frame([near, far], {"cam0": [det]}, {"cam0": cam},
                       default_priors(), delta=0.5, gate=2.0)
    assert fused[0].label == "pedestrian"
    assert fused[1].label == "UNKNOWN"
    assert fused[1].depth is None


def test_fuse_frame_multi_camera_conflict_lowest_cost_wins():
    cam_a = make_camera()
    cam_b = make_camera()
    cluster, box = cluster_and_matching_box(cam_a, (15.0, 0.0, -1.0))
    exact = Detection2D("pedestrian", *box, score=0.9)
    # Second camera reports a shifted box of a different class: higher cost.
    shifted = Detection2D("cyclist", box[0] + 20, box[1] + 15,
                          box[2] + 20, box[3] + 15, score=0.9)
    fused = fuse_frame([cluster], {"cam_a": [exact], "cam_b": [shifted]},
                       {"cam_a": cam_a, "cam_b": cam_b}, default_priors(),
                       delta=0.5, gate=5.0)
    assert fused[0].label == "pedestrian"
