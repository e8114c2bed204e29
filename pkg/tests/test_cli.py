import numpy as np
import pytest

from sceneflow import io, synthetic
from sceneflow.cli import disparity_to_color, expand, flow_to_color, main


@pytest.fixture(scope="module")
def seq(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = synthetic.street_scene(width=320, height=96, f=260.0, frames=2)
    synthetic.save_spec(spec, root / "scene.json")
    assert main(["synth", "--spec", str(root / "scene.json"), "--out", str(root / "gt")]) == 0
    return root


def test_synth_writes_sequence(seq):
    gt = seq / "gt"
    assert len(expand(str(gt / "image_2" / "%06d.png"))) == 3
    assert len(list((gt / "flow").glob("*.png"))) == 2
    assert io.read_calib(gt / "calib.txt").width == 320
    assert len(io.read_poses(gt / "poses.txt")) == 2


def test_run_eval_viz(seq, capsys):
    gt, est = seq / "gt", seq / "est"
    rc = main(["run", "--left", str(gt / "image_2" / "%06d.png"), "--right", str(gt / "image_3" / "*.png"),
               "--calib", str(gt / "calib.txt"), "--out", str(est), "--quiet"])
    assert rc == 0
    for sub in ("disp_0", "disp_1", "flow", "mask"):
        assert sorted(p.name for p in (est / sub).glob("*.png")) == ["000000.png", "000001.png"]
    assert len(io.read_poses(est / "poses.txt")) == 2
    capsys.readouterr()
    assert main(["eval", "--est", str(est), "--gt", str(gt)]) == 0
    out = capsys.readouterr().out
    assert "000001.png" in out and "mean over frames" in out and "SF" in out
    png = seq / "v.png"
    assert main(["viz", "--input", str(est / "flow" / "000000.png"), "--out", str(png)]) == 0
    first = png.read_bytes()
    assert main(["viz", "--input", str(est / "flow" / "000000.png"), "--out", str(png)]) == 0
    assert png.read_bytes() == first
    for sub in ("disp_0", "mask"):
        assert main(["viz", "--input", str(est / sub / "000000.png"), "--out", str(seq / f"{sub}.png")]) == 0
        assert io.read_image(seq / f"{sub}.png").shape == (96, 320, 3)


@pytest.mark.slow
def test_run_with_overrides_and_prior(seq):
    gt = seq / "gt"
    rc = main(["run", "--left", str(gt / "image_2" / "*.png"), "--right", str(gt / "image_3" / "*.png"),
               "--calib", str(gt / "calib.txt"), "--out", str(seq / "est2"), "--quiet", "--set", "lam_sgm=0.5",
               "--prior-flow", str(gt / "flow" / "*.png")])
    assert rc == 0


@pytest.mark.parametrize("argv, needle", [
    (["run", "--left", "nope/%06d.png", "--right", "x", "--calib", "c", "--out", "o"], "--left"),
    (["eval", "--est", "a", "--gt", "missing_dir"], "--gt"),
    (["synth", "--spec", "missing.json", "--out", "o"], "--spec"),
    (["viz", "--input", "missing.png", "--out", "o.png"], "--input"),
])
def test_bad_inputs_name_the_flag(argv, needle, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) != 0
    assert needle in capsys.readouterr().err


def test_bad_calib_and_set(seq, capsys):
    gt = seq / "gt"
    base = ["run", "--left", str(gt / "image_2" / "*.png"), "--right", str(gt / "image_3" / "*.png"),
            "--out", str(seq / "bad")]
    assert main(base + ["--calib", str(seq / "scene.json")]) == 1
    assert "--calib" in capsys.readouterr().err
    assert main(base + ["--calib", str(gt / "calib.txt"), "--set", "no_such_key=1"]) == 1
    assert "no_such_key" in capsys.readouterr().err
    assert main(base + ["--calib", str(gt / "calib.txt"), "--threads", "0"]) == 2
    with pytest.raises(SystemExit):
        main(["run", "--left", "x"])


def test_color_maps():
    f = np.zeros((4, 4, 2))
    f[0, 0] = (np.nan, np.nan)
    rgb = flow_to_color(f)
    assert rgb.dtype == np.uint8 and rgb.shape == (4, 4, 3) and np.all(rgb[0, 0] == 0)
    d = np.array([[np.nan, 0.0], [5.0, 10.0]])
    rgb = disparity_to_color(d)
    assert np.all(rgb[0, 0] == 0) and not np.array_equal(rgb[1, 0], rgb[1, 1])
