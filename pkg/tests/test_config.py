import pytest

from sceneflow.config import Config, dump_config, load_config, parse_pairs, profile


def test_published_defaults():
    c = Config()
    assert c.tau == 1.0
    assert (c.lam_ncc, c.tau_ncc, c.tau_w) == (4.0, 0.5, 0.005)
    assert (c.lam_flo, c.tau_flo, c.gamma) == (4.0, 0.75, 0.3)
    assert c.lam_col == 0.5
    assert (c.lam_potts, c.kappa3) == (10.0, 0.2)
    assert c.tau_c == 0.1 and c.tau_epi == 0.25
    assert c.lam_mask == 2.0 and c.lam_gro == 10.0
    assert (c.lam_sgm, c.beta, c.gamma_sgm) == (200 / 255, 2.0, 2.0)
    assert (c.stereo_scale, c.flow_scale) == (0.65, 0.4)
    assert c.d_max == 255 and c.reference_width == 1242


def test_color_bins_default():
    from sceneflow.segmentation import BINS

    assert BINS == 64


def test_profiles():
    s = profile("sintel")
    assert (s.lam_col, s.tau_ncc) == (1.5, 0.25)
    assert profile("road").ground_prior and profile("road").forward_candidates
    assert not profile("general").ground_prior
    with pytest.raises(KeyError):
        profile("mars")


def test_scales_and_range():
    c = Config()
    assert c.scales(1242) == (0.65, 0.4)
    s1, s2 = c.scales(620)
    assert s1 == 1.0 and s2 == pytest.approx(0.4 * 1242 / 620)
    assert c.working_d_max(807) == round(255 * 807 / 1242)


def test_derived_parameter_sets():
    c = profile("general", lam_potts=3.0, seg_iters=2)
    sp = c.seg_params()
    assert sp.lam_potts == 3.0 and sp.max_iter == 2
    assert c.stereo_params(40).d_max == 40
    assert c.flow_params().wm_radius == 15 and c.vo_params().moving_weight == 0.125


def test_parse_pairs_and_errors():
    assert parse_pairs("a = 1  # note\n\n# only comment\nb=x\n") == {"a": "1", "b": "x"}
    with pytest.raises(ValueError, match="line 2"):
        parse_pairs("a = 1\nbroken\n")
    with pytest.raises(KeyError):
        Config().updated({"nope": 1})
    with pytest.raises(ValueError):
        Config().updated({"ground_prior": "maybe"})


def test_load_and_dump_roundtrip(tmp_path):
    c = profile("sintel", lam_potts=7.5, ground_prior=True, superpixels=400)
    p = tmp_path / "cfg.txt"
    p.write_text(dump_config(c))
    assert load_config(p) == c
    p.write_text("profile = road\nlam_col = 0.75\n")
    c2 = load_config(p)
    assert c2.profile == "road" and c2.ground_prior and c2.lam_col == 0.75
