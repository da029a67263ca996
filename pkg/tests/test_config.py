import numpy as np
import pytest

from occlusight.artifacts import write_matrix_csv
from occlusight.config import ConfigError, bundled, load_config, parse_config
from occlusight.photoncount import AcquisitionParams

DESK = bundled("desk_scale.cfg").read_text()


def wall_separation(scene):
    # distance between the two planes, measured along the hidden wall normal
    hw, vw = scene.hidden_wall, scene.illumination
    return abs(float(np.dot(hw.center - vw.center, hw.normal)))


def test_paper_scale_bundle():
    cfg = load_config(bundled("paper_scale.cfg"))
    s = cfg.scene
    assert (s.m, s.n) == (100, 100)
    assert len(s.occluders) == 1 and 2 * s.occluders[0].radius == pytest.approx(0.068)
    assert wall_separation(s) == pytest.approx(1.0)
    assert cfg.reconstruction.lam == 0.75


def test_desk_scale_bundle():
    cfg = load_config(bundled("desk_scale.cfg"))
    assert (cfg.scene.m, cfg.scene.n) == (32, 32)
    assert (cfg.scene.fov.counts_u, cfg.scene.fov.counts_v) == (16, 16)
    assert cfg.truth_image().shape == (32, 32)
    P = cfg.acquisition_params()
    assert isinstance(P, AcquisitionParams) and P.pulses == 830_000_000
    assert np.all(P.background == 3e-5)


def test_bundled_name_lookup_from_any_directory(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert load_config("desk_scale.cfg").name == "desk_scale"
    with pytest.raises(ConfigError):
        bundled("nope.cfg")


def test_negative_radius_names_field():
    text = DESK.replace("diameter = 0.068", "radius = -0.01")
    with pytest.raises(ConfigError, match=r"^occluders\[0\]\.radius: must be positive"):
        parse_config(text)


@pytest.mark.parametrize("old,new,field", [
    ("kp = 6.4e8", "kp = 0", "acquisition.kp"),
    ("efficiency = 0.35", "efficiency = 1.5", "acquisition.efficiency"),
    ("counts = [16, 16]", "counts = [16]", "scene.fov.counts"),
    ('likelihood = "binomial"', 'likelihood = "poisson"', "reconstruction.likelihood"),
    ("lambda = 3.0", "lambda = -3.0", "reconstruction"),
    ('builtin = "man"', 'builtin = "cat"', "truth.builtin"),
    ("seeds = [0, 1, 2]", "seeds = [0, 1.5]", "analysis.seeds[1]"),
    ("aperture_area = 2e-9", "aperture_area = -2e-9", "scene.detector.aperture_area"),
])
def test_validation_errors_name_the_field(old, new, field):
    assert old in DESK
    with pytest.raises(ConfigError) as exc:
        parse_config(DESK.replace(old, new, 1))
    assert str(exc.value).startswith(field)


def test_unknown_field_rejected():
    with pytest.raises(ConfigError, match=r"^acquisition\.pulse: unknown field"):
        parse_config(DESK.replace("seed = 1", "seed = 1\npulse = 3"))


def test_parse_error_reports_line_and_column():
    text = DESK.replace("kp = 6.4e8", "kp = = 6.4e8")
    line = text.splitlines().index("kp = = 6.4e8") + 1
    with pytest.raises(ConfigError, match=rf"parse error at line {line}, column \d+"):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.cfg")


def test_hash_ignores_layout_and_comments():
    base = parse_config(DESK).config_hash
    noisy = "# leading comment\n" + DESK.replace("kp = 6.4e8", "kp   =   6.4e8   # K_p")
    assert parse_config(noisy).config_hash == base
    assert parse_config(DESK.replace("seed = 1", "seed = 2")).config_hash != base


def test_truth_and_background_files(tmp_path):
    F = np.linspace(0, 1, 32 * 32).reshape(32, 32)
    write_matrix_csv(tmp_path / "truth.csv", F)
    B = np.full((32, 32), 2e-5)
    B[0, 0] = 5e-5
    write_matrix_csv(tmp_path / "bg.csv", B, "{!r}")
    text = (DESK.replace('builtin = "man"', 'file = "truth.csv"')
                .replace("background = 3e-5", 'background = { file = "bg.csv" }'))
    (tmp_path / "s.cfg").write_text(text)
    cfg = load_config(tmp_path / "s.cfg")
    np.testing.assert_allclose(cfg.truth_image(), F, rtol=1e-8)
    assert np.array_equal(cfg.acquisition_params().background, B)

    (tmp_path / "bg.csv").unlink()
    with pytest.raises(ConfigError, match=r"^acquisition\.background\.file"):
        load_config(tmp_path / "s.cfg")


def test_truth_file_wrong_shape(tmp_path):
    write_matrix_csv(tmp_path / "t.csv", np.zeros((4, 4)))
    (tmp_path / "s.cfg").write_text(DESK.replace('builtin = "man"', 'file = "t.csv"'))
    with pytest.raises(ConfigError, match=r"^truth\.file"):
        load_config(tmp_path / "s.cfg")


def test_reconstruction_block_maps_to_config():
    text = DESK.replace("max_iterations = 3000",
                        'max_iterations = 40\ntv = "anisotropic"\nmethod = "bb"\n'
                        "[reconstruction.step]\nshrink = 0.3")
    rc = parse_config(text).reconstruction
    assert (rc.max_iterations, rc.tv, rc.method, rc.step.shrink) == (40, "anisotropic", "bb", 0.3)
