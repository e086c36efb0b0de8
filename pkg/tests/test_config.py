import pytest

from hallmark.config import (
    PHASES,
    Config,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
    validate_config,
)
from hallmark.errors import InvalidConfig


def test_defaults_validate():
    cfg = validate_config(Config())
    assert cfg.num_landmarks == 68
    assert cfg.num_stacks == 4
    assert cfg.input_size == 64
    assert cfg.sr_output_size == 128
    assert cfg.sr_scale == 2
    assert cfg.pairs_per_batch == cfg.batch_size // 2


def test_phase_names_fixed():
    assert PHASES == (
        "pretrain_detector",
        "pretrain_transfer",
        "finetune_joint",
        "weak_finetune",
    )


@pytest.mark.parametrize(
    "field,value,fragment",
    [
        ("heatmap_size", 32, "heatmap_size"),
        ("sr_output_size", 96, "sr_output_size"),
        ("pose_channels", 100, "pose_channels"),
        ("sr_channels", -8, "sr_channels"),
        ("heatmap_weight", 0.5, "heatmap_weight"),
        ("image_l1_weight", 0.0, "image_l1_weight"),
        ("batch_size", 3, "batch_size"),
        ("batch_size", 0, "batch_size"),
        ("scale_min", 1.1, "scale"),
        ("unlabeled_fraction", 1.5, "unlabeled_fraction"),
        ("checkpoint_every", 0, "checkpoint_every"),
    ],
)
def test_validation_names_offending_field(field, value, fragment):
    cfg = Config(**{field: value})
    with pytest.raises(InvalidConfig, match=fragment):
        validate_config(cfg)


def test_heatmap_weight_binary_only():
    validate_config(Config(heatmap_weight=0.0))
    validate_config(Config(heatmap_weight=1.0))
    with pytest.raises(InvalidConfig):
        validate_config(Config(heatmap_weight=0.3))


def test_dict_round_trip():
    cfg = Config(num_landmarks=5, seed=9, image_root="/tmp/x")
    again = config_from_dict(config_to_dict(cfg))
    assert config_to_dict(again) == config_to_dict(cfg)


def test_unknown_key_rejected():
    with pytest.raises(InvalidConfig, match="unknown"):
        config_from_dict({"not_a_field": 1})


def test_type_checked():
    with pytest.raises(InvalidConfig):
        config_from_dict({"num_landmarks": "many"})


def test_overrides_parse_types():
    cfg = apply_overrides(Config(), {"num_landmarks": "5", "heatmap_sigma": "2.5", "image_root": "a/b"})
    assert cfg.num_landmarks == 5
    assert cfg.heatmap_sigma == 2.5
    assert cfg.image_root == "a/b"
    cfg = apply_overrides(cfg, {"image_root": "none"})
    assert cfg.image_root is None


def test_override_unknown_key():
    with pytest.raises(InvalidConfig, match="unknown"):
        apply_overrides(Config(), {"nope": "1"})


def test_override_bad_value():
    with pytest.raises(InvalidConfig, match="num_stacks"):
        apply_overrides(Config(), {"num_stacks": "four"})


def test_yaml_round_trip(tmp_path):
    cfg = Config(num_landmarks=5, num_stacks=2, seed=3)
    path = tmp_path / "cfg.yaml"
    save_config(cfg, path)
    loaded = load_config(path)
    assert config_to_dict(loaded) == config_to_dict(cfg)


def test_sr_scale_modes():
    assert Config(input_size=64, heatmap_size=64, sr_output_size=128).sr_scale == 2
    assert Config(input_size=64, heatmap_size=64, sr_output_size=256).sr_scale == 4
    with pytest.raises(InvalidConfig):
        validate_config(Config(sr_output_size=512))
