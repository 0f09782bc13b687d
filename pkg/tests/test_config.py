import pytest

from trajforge.config import ConfigError, PipelineConfig, dump_config, load_config, parse_value


def write(tmp_path, text):
    p = tmp_path / "cfg.ini"
    p.write_text(text)
    return p


def test_defaults():
    cfg = load_config(env={})
    assert cfg == PipelineConfig()
    assert cfg.tracker.max_age == 2 and cfg.train.batch_size == 64 and cfg.metrics.k == 6


def test_file_and_dash_keys(tmp_path):
    p = write(tmp_path, "[tracker]\nmax-age = 4\nprocess_noise_q = 0.1, 0.1, 0.1, 0.1, 1, 1  # loose\n"
                        "[experiment]\nfractions = 0.05, 1.0\nseeds = 1, 2\n")
    cfg = load_config(p, env={})
    assert cfg.tracker.max_age == 4
    assert cfg.tracker.process_noise_q == (0.1, 0.1, 0.1, 0.1, 1.0, 1.0)
    assert cfg.experiment.fractions == (0.05, 1.0) and cfg.experiment.seeds == (1, 2)


def test_overrides_beat_file(tmp_path):
    p = write(tmp_path, "[tracker]\nmax_age = 4\n")
    assert load_config(p, {"tracker.max-age": "7"}, env={}).tracker.max_age == 7


def test_motion_mix_pairs():
    cfg = load_config(overrides={"scene.motion_mix": "constant_velocity:0.5, constant_turn:0.5"}, env={})
    assert cfg.scene.motion_mix == {"constant_velocity": 0.5, "constant_turn": 0.5}


def test_none_value():
    cfg = load_config(overrides={"train.grad_clip": "none"}, env={})
    assert cfg.train.grad_clip is None
    assert load_config(overrides={"train.grad_clip": "2.5"}, env={}).train.grad_clip == 2.5


def test_seed_env():
    cfg = load_config(env={"TRAJFORGE_SEED": "17"})
    assert cfg.scene.seed == 17 and cfg.train.seed == 17 and cfg.experiment.benchmark_seed == 17
    with pytest.raises(ConfigError):
        load_config(env={"TRAJFORGE_SEED": "abc"})


@pytest.mark.parametrize("overrides", [{"tracker.max_age": "-1"}, {"tracker.nope": "1"}, {"bogus.key": "1"},
                                       {"train.lr": "fast"}, {"detector_profiles.default": "blurry"},
                                       {"scene.motion_mix": "constant_velocity:0.5"}, {"maxage": "1"}])
def test_invalid(overrides):
    with pytest.raises(ConfigError):
        load_config(overrides=overrides, env={})


def test_malformed_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "max_age = 3\n"), env={})


def test_dump_roundtrip(tmp_path):
    cfg = load_config(overrides={"tracker.max_age": "5", "train.grad_clip": "1.5", "window.stride": "3"}, env={})
    p = write(tmp_path, dump_config(cfg))
    assert load_config(p, env={}) == cfg


def test_digest_tracks_content():
    a = load_config(env={})
    b = load_config(overrides={"train.lr": "0.002"}, env={})
    assert a.digest() == load_config(env={}).digest() and a.digest() != b.digest()


def test_train_config_applies_forecaster_shape():
    cfg = load_config(overrides={"forecaster.hidden": "16", "forecaster.n_modes": "3"}, env={})
    assert cfg.train_config.hidden == 16 and cfg.train_config.n_modes == 3


def test_parse_value_bool():
    assert parse_value("yes", False) is True
    with pytest.raises(ValueError):
        parse_value("maybe", True)
