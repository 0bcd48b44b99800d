"""Config parsing, per-encoder defaults, validation, and text round-trip."""

import pytest

from vadkit.config import (
    PipelineConfig,
    config_to_text,
    default_config,
    load_config,
    parse_config,
    validate_config,
)
from vadkit.errors import ConfigError


def test_defaults_per_encoder_type():
    dfsmn = default_config("dfsmn")
    assert (dfsmn.encoder.num_blocks, dfsmn.encoder.width) == (10, 256)
    rwkv = default_config("rwkv")
    assert (rwkv.encoder.num_blocks, rwkv.encoder.width) == (4, 256)
    sanm = default_config("sanm")
    assert (sanm.encoder.num_blocks, sanm.encoder.width) == (4, 320)
    with pytest.raises(ConfigError):
        default_config("lstm")


def test_empty_text_is_all_defaults():
    assert parse_config("") == PipelineConfig()


def test_parse_sections_comments_and_types():
    cfg = parse_config(
        """
        [vad]
        on_threshold = 0.7   # tuned
        min_speech_ms = 120

        [features]
        normalize = false

        [train]
        task = vad
        learning_rate = 0.02
        """
    )
    assert cfg.vad.on_threshold == 0.7
    assert cfg.vad.min_speech_ms == 120
    assert cfg.features.normalize is False
    assert cfg.train.task == "vad"
    assert cfg.train.learning_rate == 0.02


def test_encoder_type_defaults_apply_before_explicit_keys():
    # type may appear after other encoder keys; explicit keys still win
    cfg = parse_config("[encoder]\nnum_blocks = 7\ntype = sanm\n")
    assert cfg.encoder.type == "sanm"
    assert cfg.encoder.num_blocks == 7
    assert cfg.encoder.width == 320  # from the sanm defaults

    cfg = parse_config("[encoder]\ntype = rwkv\n")
    assert (cfg.encoder.num_blocks, cfg.encoder.width) == (4, 256)


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("[nosuch]\n")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("[vad]\nbogus_key = 3\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("[vad\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("on_threshold = 0.7\n")  # key before any section
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("[vad]\nmin_speech_ms = soon\n")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("[features]\nnormalize = maybe\n")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("[encoder]\ntype = gru\n")


def test_text_round_trip(tmp_path):
    cfg = default_config("rwkv")
    cfg.vad.on_threshold = 0.65
    cfg.heads.lambda_punct = 0.0
    cfg.train.epochs = 7
    path = tmp_path / "pipeline.cfg"
    path.write_text(config_to_text(cfg), encoding="utf-8")
    assert load_config(str(path)) == cfg


@pytest.mark.parametrize(
    "mutate",
    [
        lambda c: setattr(c.vad, "on_threshold", 0.3) or setattr(c.vad, "off_threshold", 0.5),
        lambda c: setattr(c.vad, "on_threshold", 1.5),
        lambda c: setattr(c.vad, "pad_ms", -10),
        lambda c: setattr(c.vad, "smooth_window_frames", 4),
        lambda c: setattr(c.heads, "lambda_asr", -0.5),
        lambda c: (setattr(c.heads, "lambda_vad", 0.0), setattr(c.heads, "lambda_asr", 0.0), setattr(c.heads, "lambda_punct", 0.0)),
        lambda c: setattr(c.heads, "vocab_size", 0),
        lambda c: setattr(c.heads, "punct_classes", 1),
        lambda c: setattr(c.train, "task", "asr"),
        lambda c: setattr(c.train, "learning_rate", 0.0),
        lambda c: setattr(c.train, "epochs", 0),
        lambda c: setattr(c.eval, "grid_ms", 0),
        lambda c: setattr(c.features, "shift_ms", 20),
        lambda c: setattr(c.encoder, "dropout", 1.0),
        lambda c: setattr(c.encoder, "lorder", -1),
        lambda c: setattr(c.encoder, "lstride", 0),
    ],
)
def test_validation_rejects_bad_values(mutate):
    cfg = default_config("dfsmn")
    mutate(cfg)
    with pytest.raises(ConfigError):
        validate_config(cfg)


def test_validation_checks_sanm_head_divisibility():
    cfg = default_config("sanm")
    cfg.encoder.width = 321
    with pytest.raises(ConfigError, match="divisible"):
        validate_config(cfg)


def test_parse_validates_the_result():
    with pytest.raises(ConfigError):
        parse_config("[vad]\non_threshold = 0.2\noff_threshold = 0.4\n")
