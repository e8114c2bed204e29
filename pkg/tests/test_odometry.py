import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sceneflow import synthetic
from sceneflow.geometry import Pose
from sceneflow.odometry import (TUKEY_C, PoseHypothesis, VoParams, base_weights, estimate_motion, feature_init,
                                forward_translation_candidates, irls_align, mad_scale, select_pose, select_targets,
                                tukey_rho, tukey_weight, warp_jacobian)


def _errors(est: Pose, gt: Pose):
    return np.degrees((gt.inverse() @ est).rotation_angle()), float(np.linalg.norm(est.t - gt.t))


def _median_depth(rig, d):
    return float(np.median(rig.fb / d[np.isfinite(d)]))


@pytest.fixture(scope="module")
def forward_pair():
    spec = synthetic.odometry_scene(frames=1, speed=0.1, yaw_deg=0.0)
    return spec, synthetic.render(spec)


@pytest.fixture(scope="module")
def yaw_pair():
    spec = synthetic.odometry_scene(frames=1, speed=0.0, yaw_deg=2.0)
    return spec, synthetic.render(spec)


def test_tukey_values():
    k = TUKEY_C * 0.5
    assert tukey_rho(0.0, 0.5) == 0.0
    assert tukey_rho(10 * k, 0.5) == pytest.approx(k * k / 6)
    assert tukey_rho(k / 2, 0.5) == pytest.approx(k * k / 6 * (1 - 0.75**3))
    assert tukey_weight(np.array([0.0, k, 2 * k]), 0.5).tolist() == [1.0, 0.0, 0.0]


@given(st.floats(-10, 10), st.floats(0.01, 2.0))
def test_tukey_bounded_and_even(r, s):
    k = TUKEY_C * s
    assert 0 <= tukey_rho(r, s) <= k * k / 6 + 1e-12
    assert tukey_rho(r, s) == tukey_rho(-r, s)


def test_mad_scale_of_gaussian(rng):
    assert mad_scale(rng.normal(0, 2.0, 100_000)) == pytest.approx(2.0, rel=0.02)
    assert mad_scale(np.zeros(10)) == 1e-4


def test_base_weights():
    occ = np.array([[True, False, False]])
    mov = np.array([[True, True, False]])
    np.testing.assert_array_equal(base_weights(occ, mov), [[0.0, 0.125, 1.0]])


def test_warp_jacobian_matches_finite_differences(rng):
    from sceneflow.geometry import warp_points

    rig = synthetic.odometry_scene().rig
    u, v, d = rng.uniform(0, 320, 20), rng.uniform(0, 96, 20), rng.uniform(2, 30, 20)
    jac = warp_jacobian(u, v, d, rig)
    eps = 1e-6
    for i in range(6):
        xi = np.zeros(6)
        xi[i] = eps
        up, vp, _ = warp_points(u, v, d, rig, Pose.from_twist(xi))
        um, vm, _ = warp_points(u, v, d, rig, Pose.from_twist(-xi))
        np.testing.assert_allclose(jac[:, 0, i], (up - um) / (2 * eps), rtol=1e-5, atol=1e-4)
        np.testing.assert_allclose(jac[:, 1, i], (vp - vm) / (2 * eps), rtol=1e-5, atol=1e-4)


def test_select_targets_skips_border_and_weightless(rng):
    img = rng.random((20, 30))
    w = np.ones((20, 30))
    w[:, 10:] = 0
    t = select_targets(img, np.ones((20, 30)), w, step=1)
    assert t.any() and not t[:, 10:].any() and not t[:2].any() and not t[:, :2].any()


def test_irls_identity_on_static_pair(forward_pair):
    spec, frames = forward_pair
    f = frames[0]
    pose, info = irls_align(f.left, f.left, f.disparity, spec.rig, np.ones_like(f.disparity))
    rot, tr = _errors(pose, Pose.identity())
    assert info.ok and rot < 1e-6 and tr < 1e-6


def test_irls_forward_translation(forward_pair):
    spec, frames = forward_pair
    f0, f1 = frames[:2]
    np.testing.assert_allclose(f0.pose.t, [-0.012, 0, -0.1])
    pose, info = irls_align(f0.left, f1.left, f0.disparity, spec.rig, base_weights(f0.occluded))
    rot, tr = _errors(pose, f0.pose)
    assert info.ok and rot < 0.05 and tr < 0.01 * _median_depth(spec.rig, f0.disparity)


def test_irls_yaw_from_identity(yaw_pair):
    spec, frames = yaw_pair
    f0, f1 = frames[:2]
    pose, info = irls_align(f0.left, f1.left, f0.disparity, spec.rig, base_weights(f0.occluded))
    rot, _ = _errors(pose, f0.pose)
    assert info.ok and rot < 0.05


def test_irls_energy_monotone(yaw_pair):
    spec, frames = yaw_pair
    f0, f1 = frames[:2]
    _, info = irls_align(f0.left, f1.left, f0.disparity, spec.rig, base_weights(f0.occluded))
    assert info.trace and all(after <= before for before, after in info.trace)


def test_occluded_pixels_do_not_matter(forward_pair):
    spec, frames = forward_pair
    f0, f1 = frames[:2]
    occ = np.zeros_like(f0.occluded)
    occ[:, 100:160] = True
    w = base_weights(occ)
    d2 = f0.disparity.copy()
    d2[occ] = 3.0 * d2[occ] + 1.0
    a, _ = irls_align(f0.left, f1.left, f0.disparity, spec.rig, w)
    b, _ = irls_align(f0.left, f1.left, d2, spec.rig, w)
    np.testing.assert_array_equal(a.matrix, b.matrix)


def test_select_pose_prefers_better_and_breaks_ties(yaw_pair):
    spec, frames = yaw_pair
    f0, f1 = frames[:2]
    w = base_weights(f0.occluded)
    params = VoParams(max_iter=0)
    hyps = [PoseHypothesis(Pose.identity(), "identity"), PoseHypothesis(f0.pose, "feature")]
    assert select_pose(hyps, f0.left, f1.left, f0.disparity, spec.rig, w, params).provenance == "feature"
    hyps = [PoseHypothesis(f0.pose, "previous"), PoseHypothesis(f0.pose, "feature")]
    assert select_pose(hyps, f0.left, f1.left, f0.disparity, spec.rig, w, params).provenance == "previous"
    with pytest.raises(ValueError):
        select_pose([], f0.left, f1.left, f0.disparity, spec.rig, w)


def test_feature_init_blank_image_fails():
    rig = synthetic.odometry_scene().rig
    blank = np.full((96, 320), 0.5, np.float32)
    pose, ok = feature_init(blank, blank, np.full((96, 320), 10.0), rig)
    assert not ok and np.array_equal(pose.matrix, np.eye(4))


def test_feature_init_with_outliers(rng):
    rig = synthetic.odometry_scene().rig
    gt = Pose.from_twist(np.r_[0.05, -0.02, -0.3, 0.0, 0.02, 0.0])
    n = 200
    src = np.stack([rng.uniform(5, 315, n), rng.uniform(5, 91, n)], axis=1)
    disp = np.zeros((96, 320))
    d = rng.uniform(5, 40, n)
    disp[src[:, 1].astype(int), src[:, 0].astype(int)] = d
    # back-projection uses the truncated pixel, so the match origin is that pixel
    src = np.floor(src)
    from sceneflow.geometry import warp_points

    up, vp, _ = warp_points(src[:, 0], src[:, 1], disp[src[:, 1].astype(int), src[:, 0].astype(int)], rig, gt)
    dst = np.stack([up, vp], axis=1)
    bad = rng.random(n) < 0.3
    dst[bad] += rng.uniform(-30, 30, (bad.sum(), 2))
    pose, ok = feature_init(None, None, disp, rig, matches=(src, dst))
    rot, tr = _errors(pose, gt)
    assert ok and rot < 1e-3 and tr < 1e-3


def test_forward_translation_candidates():
    c = forward_translation_candidates(20.0, n=16)
    mags = np.array([-p.t[2] for p in c])
    assert len(c) == 16 and mags[0] == pytest.approx(0.02) and mags[-1] == pytest.approx(0.8)
    np.testing.assert_allclose(mags[1:] / mags[:-1], (40.0) ** (1 / 15))
    assert forward_translation_candidates(20.0, enabled=False) == []


def test_estimate_motion_hypotheses(yaw_pair):
    spec, frames = yaw_pair
    f0, f1 = frames[:2]
    pose, hyps = estimate_motion(f0.left, f1.left, f0.disparity, f0.occluded, spec.rig, previous=Pose.identity(),
                                 params=VoParams(use_translations=True))
    provs = [h.provenance for h in hyps]
    assert provs[:2] == ["identity", "previous"] and "feature" in provs and provs.count("translation") == 16
    assert _errors(pose, f0.pose)[0] < 0.05


def test_downweighting_moving_pixels_helps():
    spec = synthetic.odometry_scene(mover=True, frames=1)
    f0, f1 = synthetic.render(spec)[:2]
    params = VoParams(feature_models=1)
    full, _ = irls_align(f0.left, f1.left, f0.disparity, spec.rig, base_weights(f0.occluded), params=params)
    down, _ = irls_align(f0.left, f1.left, f0.disparity, spec.rig, base_weights(f0.occluded, f0.mask), params=params)
    assert _errors(down, f0.pose)[1] < _errors(full, f0.pose)[1]
