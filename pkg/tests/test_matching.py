import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from sceneflow import synthetic
from sceneflow.geometry import Pose
from sceneflow.matching import (flow_cost_volume, flow_labels, ncc, patch_stddev_weight, pose_cost_volume,
                                stereo_cost_volume, tncc, tncc_from_ncc, tncc_points)


def _texture(h, w, seed=0, sigma=1.0):
    g = gaussian_filter(np.random.default_rng(seed).random((h, w)), sigma)
    return ((g - g.min()) / (g.max() - g.min())).astype(np.float32)


def _ncc_oracle(a, b):
    a = a.ravel().astype(np.float64) - a.mean()
    b = b.ravel().astype(np.float64) - b.mean()
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


def test_ncc_identical_and_negated():
    img = _texture(20, 20)
    assert ncc(img, (10, 10), img, (10, 10)) == pytest.approx(1.0, abs=1e-12)
    neg = (2 * img[8:13, 8:13].mean() - img).astype(np.float32)
    assert ncc(img, (10, 10), neg, (10, 10)) == pytest.approx(-1.0, abs=1e-6)


def test_ncc_matches_direct_formula():
    a = _texture(15, 15, 1)
    b = _texture(15, 15, 2)
    for p in [(5, 5), (7, 9), (10, 4)]:
        ref = _ncc_oracle(a[p[1] - 2:p[1] + 3, p[0] - 2:p[0] + 3], b[p[1] - 2:p[1] + 3, p[0] - 2:p[0] + 3])
        assert ncc(a, p, b, p) == pytest.approx(ref, abs=1e-9)


def test_ncc_bilinear_target():
    a = _texture(20, 20, 3)
    b = _texture(20, 20, 4).astype(np.float64)
    q = (9.3, 10.6)
    ys, xs = np.mgrid[-2:3, -2:3]
    tx, ty = q[0] + xs, q[1] + ys
    x0, y0 = np.floor(tx).astype(int), np.floor(ty).astype(int)
    fx, fy = tx - x0, ty - y0
    patch = (b[y0, x0] * (1 - fx) * (1 - fy) + b[y0, x0 + 1] * fx * (1 - fy) + b[y0 + 1, x0] * (1 - fx) * fy
             + b[y0 + 1, x0 + 1] * fx * fy)
    ref = _ncc_oracle(a[8:13, 8:13], patch)
    assert ncc(a, (10, 10), b.astype(np.float32), q) == pytest.approx(ref, abs=1e-6)


def test_ncc_flat_patch_is_zero_and_outside_is_invalid():
    img = _texture(20, 20)
    flat = np.full((20, 20), 0.5, np.float32)
    assert ncc(img, (10, 10), flat, (10, 10)) == 0.0
    assert np.isnan(ncc(img, (10, 10), img, (-1.0, 10.0)))
    assert tncc(img, (10, 10), img, (25.0, 10.0)) == 1.0


@pytest.mark.parametrize("score,tau,expected", [(1.0, 1.0, 0.0), (-1.0, 1.0, 1.0), (0.9, 0.25, 0.1)])
def test_tncc_values(score, tau, expected):
    assert tncc_from_ncc(score, tau) == pytest.approx(expected, abs=1e-12)


@given(st.integers(0, 10_000), st.floats(0.1, 3.0), st.floats(-0.5, 0.5))
def test_ncc_affine_invariant_and_symmetric(seed, a, b):
    img = _texture(12, 12, seed)
    other = _texture(12, 12, seed + 1)
    s = ncc(img, (6, 6), other, (6, 6))
    # a 5x5 patch of float32 texture rescaled in float32 keeps about 6 digits
    assert ncc(img, (6, 6), (a * other + b).astype(np.float32), (6, 6)) == pytest.approx(s, abs=1e-5)
    assert ncc(other, (6, 6), img, (6, 6)) == pytest.approx(s, abs=1e-9)


@given(st.integers(0, 10_000), st.floats(0.05, 2.0))
def test_tncc_range(seed, tau):
    rng = np.random.default_rng(seed)
    a = _texture(16, 16, seed)
    b = _texture(16, 16, seed + 7)
    xs = rng.integers(0, 16, 50)
    ys = rng.integers(0, 16, 50)
    c = tncc_points(a, b, xs, ys, rng.uniform(-3, 19, 50), rng.uniform(-3, 19, 50), tau)
    assert np.all((c >= 0) & (c <= tau))


def test_stereo_volume_finds_shift():
    img = _texture(40, 80, 5)
    right = np.roll(img, -7, axis=1)
    vol = stereo_cost_volume(img, right, 16)
    arg = vol.cost.argmin(axis=2)
    assert np.all(arg[5:-5, 30:-10] == 7)
    assert np.all((vol.cost >= 0) & (vol.cost <= 1))
    # correspondences left of the image cost tau
    assert np.all(vol.cost[:, 3, 4:] == 1.0)


def test_stereo_volume_constant_images():
    flat = np.full((10, 30), 0.3, np.float32)
    vol = stereo_cost_volume(flat, flat, 5)
    assert np.all(vol.cost == 1.0)


def test_stereo_volume_matches_pointwise(rng):
    a = _texture(24, 40, 8)
    b = _texture(24, 40, 9)
    vol = stereo_cost_volume(a, b, 9, tau=0.8)
    ys, xs = rng.integers(0, 24, 200), rng.integers(0, 40, 200)
    ds = rng.integers(0, 10, 200)
    ref = tncc_points(a, b, xs, ys, (xs - ds).astype(float), ys.astype(float), 0.8)
    np.testing.assert_allclose(vol.cost[ys, xs, ds], ref, atol=1e-6)


def test_pose_volume_reduces_to_stereo(multiplane):
    spec, fr = multiplane
    a = stereo_cost_volume(fr.left, fr.right, 20)
    b = pose_cost_volume(fr.left, fr.right, (0, 20), spec.rig, spec.rig.left_to_right)
    np.testing.assert_allclose(a.cost, b.cost, atol=1e-6)


def test_pose_volume_identity():
    img = _texture(30, 40, 11)
    rig = synthetic.plane_scene().rig
    vol = pose_cost_volume(img, img, (0, 6), rig, Pose.identity())
    assert np.max(vol.cost[3:-3, 3:-3]) < 1e-6


def test_pose_volume_translated_plane():
    spec = synthetic.plane_scene(depth=8.0, frames=1, velocity=(0.3, 0.0, 0.0))
    frames = synthetic.render(spec)
    d_true = spec.rig.fb / 8.0
    vol = pose_cost_volume(frames[0].left, frames[1].left, (0, 30), spec.rig, frames[0].pose)
    arg = vol.cost.argmin(axis=2)
    inner = arg[5:-5, 25:-5]
    assert np.mean(np.abs(inner - d_true) <= 1) > 0.95


def test_flow_volume_finds_2d_shift():
    img = _texture(40, 60, 12)
    tgt = np.roll(np.roll(img, 3, axis=1), -2, axis=0)
    vol = flow_cost_volume(img, tgt, (-4, 4, -4, 4))
    arg = vol.cost.argmin(axis=2)
    best = vol.labels[arg[6:-6, 6:-6]]
    assert np.all(best == (3, -2))


def test_flow_volume_mask_and_box():
    img = _texture(30, 30, 13)
    mask = np.zeros((30, 30), bool)
    mask[10:20, 5:15] = True
    full = flow_cost_volume(img, img, (-1, 1, -1, 1), mask=mask)
    crop = flow_cost_volume(img, img, (-1, 1, -1, 1), mask=mask, box=(10, 20, 5, 15))
    np.testing.assert_array_equal(crop.cost, full.cost[10:20, 5:15])
    assert np.all(full.cost[~mask] == 1.0)


def test_flow_labels_order():
    labels, grid = flow_labels((-1, 0, 2, 3))
    assert grid == (2, 2)
    np.testing.assert_array_equal(labels, [[-1, 2], [-1, 3], [0, 2], [0, 3]])
    with pytest.raises(ValueError):
        flow_labels((1, 0, 0, 0))


def test_patch_stddev_weight(rng):
    flat = np.full((9, 9), 0.2, np.float32)
    assert np.all(patch_stddev_weight(flat) == 0)
    checker = (np.indices((9, 9)).sum(0) % 2).astype(np.float32)
    assert np.all(patch_stddev_weight(checker) == 1.0)
    z = rng.normal(size=(5, 5))
    z = (z - z.mean()) / z.std()
    patch = (0.5 + 0.0025 * z).astype(np.float32)
    assert patch_stddev_weight(patch, 0.005)[2, 2] == pytest.approx(0.5, abs=1e-3)
