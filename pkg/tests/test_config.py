import pytest

from wildiron.cli import default_config_path
from wildiron.config import ConfigError, PipelineConfig, dump_config, load_config


def test_packaged_ini_matches_defaults():
    assert load_config(default_config_path()) == PipelineConfig()


def test_published_defaults():
    cfg = PipelineConfig()
    assert cfg.segmentation.ransac_threshold == 0.02
    assert cfg.descriptor.normal_radius == 0.02
    assert cfg.descriptor.wild_radius == 0.03
    assert (cfg.pathplan.lower_threshold, cfg.pathplan.upper_threshold) == (0.4, 0.95)
    assert cfg.pathplan.erode_size == 11
    assert cfg.control.contact_force == (0.0, 0.0, -200.0)
    assert cfg.control.contact_torque == (0.0, 25.0, 0.0)


def test_dump_round_trip(tmp_path):
    cfg = load_config(None, ["seed=7", "pathplan.erode_size=9", "scene.wrinkle_1=0 0 1 0 0.1 0.01 0.01"])
    f = tmp_path / "c.ini"
    f.write_text(dump_config(cfg))
    assert load_config(f) == cfg


def test_overrides_typed():
    cfg = load_config(None, ["descriptor.wild_radius=0.04", "pathplan.break_cycles=off", "control.contact_torque=0,30,0"])
    assert cfg.descriptor.wild_radius == 0.04
    assert cfg.pathplan.break_cycles is False
    assert cfg.control.contact_torque == (0.0, 30.0, 0.0)


def test_explicit_wrinkles_build_spec():
    cfg = load_config(None, ["scene.wrinkle_1=0.01 0 0 1 0.1 0.01 0.009"])
    spec = cfg.scene_spec()
    assert len(spec.wrinkles) == 1 and spec.wrinkles[0].width == 0.009


def test_zero_wrinkles_is_flat():
    assert load_config(None, ["scene.wrinkles=0"]).scene_spec().wrinkles == ()


@pytest.mark.parametrize(
    "override, key",
    [
        ("pathplan.erode_size=10", "pathplan.erode_size"),
        ("pathplan.lower_threshold=0.99", "pathplan.lower_threshold"),
        ("descriptor.wild_radius=0", "descriptor.wild_radius"),
        ("control.flatten=1.5", "control.flatten"),
        ("segmentation.bogus=1", "segmentation.bogus"),
        ("nosuch.key=1", "nosuch.key"),
        ("control.max_steps=many", "control.max_steps"),
        ("pathplan.break_cycles=maybe", "pathplan.break_cycles"),
    ],
)
def test_errors_name_the_key(override, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        load_config(None, [override])


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.ini")


def test_unknown_section(tmp_path):
    f = tmp_path / "c.ini"
    f.write_text("[optics]\nfocal = 1\n")
    with pytest.raises(ConfigError, match="optics"):
        load_config(f)
