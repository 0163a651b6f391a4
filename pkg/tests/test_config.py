"""Run-config serialization: round trips, precedence, validation."""

import dataclasses

import pytest

from lesionseg.config import (RunConfig, apply_overrides, config_from_text,
                              config_to_text, load_config, save_config)
from lesionseg.errors import ValidationError


def test_defaults_build_a_valid_model_config():
    cfg = RunConfig()
    mc = cfg.model_config()
    assert mc.encoder.stage_channels == (16, 32, 64)
    assert mc.use_sfm and mc.use_msff
    assert mc.memory_capacity is None  # 0 maps to unlimited


def test_text_round_trip_is_identity():
    cfg = RunConfig(data_root="/tmp/x", stage_channels=(8, 16), total_stride=4,
                    feature_channels=16, learning_rate=0.25, steps=7,
                    use_msff=False, memory_capacity=3, seed=11)
    assert config_from_text(config_to_text(cfg)) == cfg


def test_file_round_trip(tmp_path):
    cfg = RunConfig(pooling="max", encoder_tap=3, momentum=0.5)
    path = tmp_path / "run.ini"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_text_has_expected_sections():
    text = config_to_text(RunConfig())
    for section in ("[data]", "[model]", "[train]", "[run]"):
        assert section in text


def test_parses_booleans_and_tuples():
    text = """
[model]
stage_channels = 4, 8
total_stride = 4
feature_channels = 8
use_sfm = off
key_scaling = YES
"""
    cfg = config_from_text(text)
    assert cfg.stage_channels == (4, 8)
    assert cfg.use_sfm is False
    assert cfg.key_scaling is True


def test_unknown_section_rejected():
    with pytest.raises(ValidationError, match="section"):
        config_from_text("[optimizer]\nlearning_rate = 0.1\n")


def test_unknown_key_rejected():
    with pytest.raises(ValidationError, match="does not belong"):
        config_from_text("[train]\nwarmup = 5\n")
    with pytest.raises(ValidationError, match="unknown config key"):
        apply_overrides(RunConfig(), {"warmup": "5"})


def test_key_in_wrong_section_rejected():
    with pytest.raises(ValidationError, match="does not belong"):
        config_from_text("[data]\nsteps = 5\n")


def test_bad_value_types_rejected():
    with pytest.raises(ValidationError, match="steps"):
        config_from_text("[train]\nsteps = soon\n")
    with pytest.raises(ValidationError, match="boolean"):
        config_from_text("[model]\nuse_sfm = maybe\n")


@pytest.mark.parametrize("kwargs", [
    dict(split_ratio=0.0),
    dict(split_ratio=1.0),
    dict(learning_rate=0.0),
    dict(steps=-1),
    dict(momentum=1.0),
    dict(momentum=-0.1),
    dict(loss_window=0),
    dict(log_every=0),
    dict(pooling="median"),
    dict(encoder_tap=1),
    dict(stage_channels=(16, 32), total_stride=4, feature_channels=32,
         encoder_tap=2),  # tap 2 needs >= 3 stages to reach the third-last one
])
def test_invalid_configs_rejected(kwargs):
    with pytest.raises((ValidationError, ValueError)):
        RunConfig(**kwargs)


def test_tap_2_accepted_with_three_stages():
    cfg = RunConfig(stage_channels=(16, 32, 64), encoder_tap=2)
    assert cfg.model_config().tap_stage_index == 0


def test_overrides_beat_file_values():
    cfg = config_from_text("[train]\nlearning_rate = 0.5\nsteps = 100\n")
    out = apply_overrides(cfg, {"learning_rate": "0.125", "steps": None})
    assert out.learning_rate == 0.125
    assert out.steps == 100  # None means "flag not given"


def test_overrides_accept_python_values():
    out = apply_overrides(RunConfig(), {"use_msff": False, "seed": 3})
    assert out.use_msff is False and out.seed == 3


def test_empty_overrides_return_same_object():
    cfg = RunConfig()
    assert apply_overrides(cfg, {"steps": None}) is cfg


def test_overridden_config_revalidates():
    with pytest.raises(ValidationError):
        apply_overrides(RunConfig(), {"momentum": "2.0"})


def test_frozen():
    with pytest.raises(dataclasses.FrozenInstanceError):
        RunConfig().steps = 5
