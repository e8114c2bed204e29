import time

import numpy as np
import pytest

from sceneflow.geometry import Pose
from sceneflow.matching import stereo_cost_volume
from sceneflow.metrics import disparity_outliers
from sceneflow.stereo import (StereoOutput, binocular, blend_weights, epipolar_cost, epipolar_refine, lr_consistency,
                              reduce_range, right_volume, temporal_targets)


def test_lr_consistency_consistent_and_inconsistent():
    dl = np.full((2, 10), 2.0)
    dr = np.full((2, 10), 2.0)
    occ = lr_consistency(dl, dr)
    assert occ[:, :2].all() and not occ[:, 2:].any()  # x - d < 0 leaves the image
    dr[:, 5] = 4.0
    occ = lr_consistency(dl, dr)
    assert occ[:, 7].all() and not occ[:, 6].any()
    dl[0, 3] = np.nan
    assert lr_consistency(dl, np.full((2, 10), 2.0))[0, 3]


def test_reduce_range():
    d = np.r_[np.full(990, 10.2), np.full(10, 40.5)].reshape(10, 100)
    occ = np.zeros_like(d, bool)
    assert reduce_range(d, occ, 64) == 40
    assert reduce_range(d, occ, 64, frac=0.02) == 10
    occ[d > 20] = True
    assert reduce_range(d, occ, 64) == 10
    assert reduce_range(d, np.ones_like(occ), 64) == 64
    assert reduce_range(np.full((3, 3), 99.0), np.zeros((3, 3), bool), 50) == 50


def test_blend_weights():
    np.testing.assert_allclose(blend_weights(np.array([0.0, 0.1, 0.55, 1.0]), 0.1), [0, 0, 0.5, 1])


def test_right_volume_is_shifted_left_volume(rng):
    a = rng.random((8, 20)).astype(np.float32)
    b = rng.random((8, 20)).astype(np.float32)
    vol = stereo_cost_volume(a, b, 5)
    ref = stereo_cost_volume(b[:, ::-1], a[:, ::-1], 5)  # mirrored pair turns right-view matching into left-view
    rv = right_volume(vol)
    np.testing.assert_allclose(rv.cost[:, :15], ref.cost[:, ::-1][:, :15], atol=1e-6)


def test_binocular_multiplane(multiplane):
    spec, fr = multiplane
    t0 = time.perf_counter()
    out = binocular(fr.left, fr.right, d_max=32)
    elapsed = time.perf_counter() - t0
    noc = ~fr.occluded & np.isfinite(fr.disparity)
    d1 = disparity_outliers(out.disparity, fr.disparity)[noc].mean()
    assert d1 < 0.02 and elapsed < 5.0
    # most left-right failures sit on the true occlusions
    assert out.occlusion[fr.occluded].mean() > 0.5
    assert out.uncertainty.shape == fr.disparity.shape and np.all(out.uncertainty >= 0)


def test_temporal_targets_poses():
    from sceneflow import synthetic

    rig = synthetic.plane_scene().rig
    img = {k: np.zeros((2, 2)) for k in ("l_prev", "r_prev", "l_next", "r_next")}
    p, c = Pose.translation((0.1, 0, 0)), Pose.translation((0, 0, -0.2))
    out = temporal_targets(img, rig, p, c)
    assert len(out) == 4
    np.testing.assert_allclose(out[0][1].matrix, np.linalg.inv(p.matrix))
    np.testing.assert_allclose(out[3][1].matrix, rig.left_to_right.matrix @ c.matrix)
    assert temporal_targets(img, rig, None, None) == []
    assert len(temporal_targets({"l_next": img["l_next"]}, rig, p, c)) == 1


def test_epipolar_cost_without_targets_keeps_binocular(multiplane):
    _, fr = multiplane
    b = binocular(fr.left, fr.right, d_max=24)
    vol, alpha = epipolar_cost(fr.left, b, [], None)
    c = b.cost.cost.astype(np.float64)
    c = np.where(b.occlusion[..., None], np.minimum(c, 0.25), c)
    np.testing.assert_allclose(vol.cost, c, atol=1e-6)
    assert np.all(alpha == 0)


def test_epipolar_refinement_lowers_band_outliers(band_scene):
    spec, frames = band_scene
    f0, f1, f2 = frames[:3]
    b = binocular(f1.left, f1.right, d_max=48)
    imgs = {"l_prev": f0.left, "r_prev": f0.right, "l_next": f2.left, "r_next": f2.right}
    r = epipolar_refine(f1.left, imgs, spec.rig, f0.pose, f1.pose, b)
    band = f1.occluded & np.isfinite(f1.disparity)
    before = disparity_outliers(b.disparity, f1.disparity)[band].mean()
    after = disparity_outliers(r.disparity, f1.disparity)[band].mean()
    assert band.sum() > 1000
    assert after < before
    assert isinstance(r, StereoOutput) and r.d_max == 48


def test_normalized_uncertainty_flags_flat():
    out = StereoOutput(np.zeros((2, 2)), np.zeros((2, 2), bool), np.array([[0.0, 1.5], [6.0, 0.0]]),
                       np.array([[False, False], [False, True]]), 10)
    np.testing.assert_allclose(out.normalized_uncertainty(3.0), [[0, 0.5], [1, 1]])
    np.testing.assert_array_equal(out.unreliable(3.0), [[False, False], [True, True]])
