import numpy as np
import pytest

from sceneflow import synthetic
from sceneflow.config import profile
from sceneflow.geometry import rigid_flow
from sceneflow.pipeline import FrameInputs, Pipeline, process_frame, resample


@pytest.fixture(scope="module")
def small_street():
    spec = synthetic.street_scene(width=320, height=96, f=260.0, frames=3)
    return spec, synthetic.render(spec)


def _run(spec, frames, **kw):
    return list(Pipeline(spec.rig, **kw).run([f.left for f in frames], [f.right for f in frames]))


def test_static_scene_has_rigid_flow_only():
    spec = synthetic.street_scene(width=320, height=96, f=260.0, frames=2, mover=False)
    frames = synthetic.render(spec)
    for out in _run(spec, frames):
        assert not out.mask.any() and not out.initial_mask.any()
        np.testing.assert_array_equal(out.flow, rigid_flow(out.disparity, spec.rig, out.pose))
        assert "failure" not in out.diagnostics


@pytest.mark.slow
def test_moving_box_is_found(small_street):
    spec, frames = small_street
    outs = _run(spec, frames)
    assert len(outs) == 3
    for out, fr in zip(outs, frames):
        iou = (out.mask & fr.mask).sum() / (out.mask | fr.mask).sum()
        assert iou > 0.8
        e, e_rig, e_non = out.diagnostics["fusion_energy"]
        assert e <= e_rig and e <= e_non
        assert set(out.timings) == {"resample", "binocular", "odometry", "epipolar", "segmentation", "flow",
                                    "fusion", "output"}
        assert out.disparity.shape == fr.disparity.shape and out.flow.shape == fr.flow.shape


def test_resample_round_trip_of_constant_disparity():
    rig = synthetic.street_scene(width=200, height=60, f=160.0).rig
    cfg = profile("general", reference_width=200)  # working scale 0.65
    p = Pipeline(rig, cfg)
    assert p.s1 == 0.65
    d = np.full((60, 200), 23.0)
    low = p._down(d, p.s1, p.rig1) * p.s1
    assert low.shape == (p.rig1.height, p.rig1.width)
    back = p._up(low, p.s1) / p.s1
    assert np.abs(back - d).max() < 0.5
    ramp = np.tile(np.linspace(5, 40, 200), (60, 1))
    back = p._up(p._down(ramp, p.s1, p.rig1) * p.s1, p.s1) / p.s1
    assert np.abs(back - ramp)[:, 3:-3].max() < 0.5


def test_resample_keeps_pixel_centres():
    x = np.tile(np.arange(100, dtype=np.float64), (10, 1))
    out = resample(x, 0.5, (50, 5))
    # output pixel j covers input centres 2j and 2j + 1
    np.testing.assert_allclose(out[2, 2:-2], 2 * np.arange(2, 48) + 0.5, atol=1e-6)
    m = np.zeros((10, 100), bool)
    m[:, 50:] = True
    assert resample(m, 0.5, (50, 5), nearest=True).dtype == bool


@pytest.mark.slow
def test_sequential_causality(small_street):
    spec, frames = small_street
    altered = list(frames[:3]) + [synthetic.Frame(frames[3].left[::-1].copy(), frames[3].right[::-1].copy(),
                                                   *[None] * 7)]
    a = _run(spec, frames[:4])
    b = _run(spec, altered)
    # frame t reads pairs t - 1, t and t + 1 only
    for k in range(2):
        np.testing.assert_array_equal(a[k].disparity, b[k].disparity)
        np.testing.assert_array_equal(a[k].flow, b[k].flow)
        np.testing.assert_array_equal(a[k].mask, b[k].mask)
    assert not np.array_equal(a[2].disparity_next, b[2].disparity_next)


def test_motion_failure_falls_back_to_rigid(small_street, monkeypatch):
    spec, frames = small_street
    import sceneflow.pipeline as pl

    def broken(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(pl, "initial_segmentation", broken)
    f0, f1 = frames[:2]
    out, state = process_frame(Pipeline(spec.rig), FrameInputs(f0.left, f0.right, f1.left, f1.right))
    assert "boom" in out.diagnostics["failure"]
    assert not out.mask.any() and state.index == 1
    np.testing.assert_array_equal(out.flow, rigid_flow(out.disparity, spec.rig, out.pose))


def test_input_checks(small_street):
    spec, frames = small_street
    p = Pipeline(spec.rig)
    f0, f1 = frames[:2]
    with pytest.raises(ValueError, match="left_next is 320x95"):
        p.process_frame(FrameInputs(f0.left, f0.right, f1.left[:-1], f1.right))
    with pytest.raises(ValueError, match="at least two"):
        list(p.run([f0.left], [f0.right]))


def test_external_prior_flow_is_used(small_street):
    spec, frames = small_street
    f0, f1 = frames[:2]
    gt = np.nan_to_num(f0.flow)
    out, _ = Pipeline(spec.rig).process_frame(FrameInputs(f0.left, f0.right, f1.left, f1.right,
                                                           prior_flow=(gt, ~f0.flow_occluded)))
    iou = (out.mask & f0.mask).sum() / (out.mask | f0.mask).sum()
    assert iou > 0.8
