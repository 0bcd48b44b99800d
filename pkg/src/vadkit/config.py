"""Configuration: sectioned text files over dataclass defaults.

Files look like::

    [encoder]
    type = dfsmn
    rorder = 10

    [vad]
    on_threshold = 0.65   # comments allowed

Every key has a shipped default, so an empty file is a valid config.
Unknown sections or keys are rejected with the offending line number;
silent typos in tuning files are worse than a hard failure.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError

ENCODER_TYPES = ("dfsmn", "rwkv", "sanm")


@dataclass
class FeatureConfig:
    window_ms: int = 25
    shift_ms: int = 10
    num_mels: int = 80
    normalize: bool = True


@dataclass
class EncoderConfig:
    """Architecture knobs; defaults depend on ``type`` (see TYPE_DEFAULTS)."""

    type: str = "dfsmn"
    num_blocks: int = 10
    width: int = 256
    # dfsmn
    proj_dim: int = 1024
    lorder: int = 10
    rorder: int = 0
    lstride: int = 1
    rstride: int = 1
    # rwkv
    hidden_dim: int = 1024
    conv_channels: int = 256
    dropout: float = 0.1
    # sanm
    ffn_dim: int = 1280
    heads: int = 4
    memory_left: int = 10
    memory_right: int = 10
    chunk_frames: int = 500


# Per-architecture defaults; keys absent here inherit the dataclass default.
TYPE_DEFAULTS: dict[str, dict[str, int]] = {
    "dfsmn": {"num_blocks": 10, "width": 256},
    "rwkv": {"num_blocks": 4, "width": 256},
    "sanm": {"num_blocks": 4, "width": 320},
}


@dataclass
class HeadConfig:
    vocab_size: int = 30
    punct_classes: int = 5
    lambda_vad: float = 1.0
    lambda_asr: float = 0.5
    lambda_punct: float = 0.5


@dataclass
class VadDecisionConfig:
    on_threshold: float = 0.6
    off_threshold: float = 0.4
    min_speech_ms: int = 100
    max_silence_ms: int = 300
    pad_ms: int = 50
    smooth_window_frames: int = 5


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    clip_norm: float = 5.0
    epochs: int = 50
    seed: int = 0
    task: str = "multitask"


@dataclass
class EvalConfig:
    grid_ms: int = 10


@dataclass
class PipelineConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    vad: VadDecisionConfig = field(default_factory=VadDecisionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTIONS = {
    "features": FeatureConfig,
    "encoder": EncoderConfig,
    "heads": HeadConfig,
    "vad": VadDecisionConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


def default_config(encoder_type: str = "dfsmn") -> PipelineConfig:
    cfg = PipelineConfig()
    _apply_encoder_type(cfg.encoder, encoder_type)
    validate_config(cfg)
    return cfg


def _apply_encoder_type(enc: EncoderConfig, encoder_type: str) -> None:
    if encoder_type not in ENCODER_TYPES:
        raise ConfigError(f"unknown encoder type {encoder_type!r} (expected one of {', '.join(ENCODER_TYPES)})")
    enc.type = encoder_type
    for key, value in TYPE_DEFAULTS[encoder_type].items():
        setattr(enc, key, value)


def _coerce(raw: str, target_type: type, line_no: int, key: str):
    raw = raw.strip()
    if target_type is bool:
        lowered = raw.lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        raise ConfigError(f"line {line_no}: {key} expects a boolean, got {raw!r}")
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"line {line_no}: {key} expects {target_type.__name__}, got {raw!r}") from None
    return raw


def parse_config(text: str) -> PipelineConfig:
    """Parse sectioned key = value text into a fully defaulted config."""
    cfg = PipelineConfig()
    section_obj = None
    section_fields: dict[str, type] = {}
    # encoder type decides defaults for the whole section, so collect and
    # apply its keys in a second pass
    encoder_lines: list[tuple[int, str, str]] = []

    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {line_no}: malformed section header {raw_line.strip()!r}")
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigError(f"line {line_no}: unknown section [{name}]")
            section_obj = getattr(cfg, name)
            section_fields = {f.name: f.type for f in dataclasses.fields(_SECTIONS[name])}
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key = value, got {raw_line.strip()!r}")
        if section_obj is None:
            raise ConfigError(f"line {line_no}: key outside any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in section_fields:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if section_obj is cfg.encoder:
            encoder_lines.append((line_no, key, value))
            continue
        field_type = _FIELD_TYPES[type(section_obj).__name__][key]
        setattr(section_obj, key, _coerce(value, field_type, line_no, key))

    type_lines = [(ln, value) for ln, key, value in encoder_lines if key == "type"]
    if type_lines:
        line_no, value = type_lines[-1]
        try:
            _apply_encoder_type(cfg.encoder, _coerce(value, str, line_no, "type"))
        except ConfigError as exc:
            raise ConfigError(f"line {line_no}: {exc}") from None
    for line_no, key, value in encoder_lines:
        if key == "type":
            continue
        field_type = _FIELD_TYPES["EncoderConfig"][key]
        setattr(cfg.encoder, key, _coerce(value, field_type, line_no, key))

    validate_config(cfg)
    return cfg


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def validate_config(cfg: PipelineConfig) -> None:
    enc, vad, heads, train = cfg.encoder, cfg.vad, cfg.heads, cfg.train
    if enc.type not in ENCODER_TYPES:
        raise ConfigError(f"unknown encoder type {enc.type!r}")
    if enc.type == "sanm" and enc.width % enc.heads != 0:
        raise ConfigError(f"width {enc.width} not divisible by heads {enc.heads}")
    if enc.type == "dfsmn" and (enc.lorder < 0 or enc.rorder < 0 or enc.lstride < 1 or enc.rstride < 1):
        raise ConfigError("dfsmn orders must be >= 0 and strides >= 1")
    if not 0.0 <= enc.dropout < 1.0:
        raise ConfigError(f"dropout {enc.dropout} outside [0, 1)")
    if not 0.0 < vad.off_threshold <= vad.on_threshold < 1.0:
        raise ConfigError(
            f"thresholds must satisfy 0 < off <= on < 1, got off={vad.off_threshold} on={vad.on_threshold}"
        )
    if min(vad.min_speech_ms, vad.max_silence_ms, vad.pad_ms) < 0:
        raise ConfigError("vad durations must be >= 0")
    if vad.smooth_window_frames < 1 or vad.smooth_window_frames % 2 == 0:
        raise ConfigError(f"smooth_window_frames must be odd and >= 1, got {vad.smooth_window_frames}")
    lambdas = (heads.lambda_vad, heads.lambda_asr, heads.lambda_punct)
    if any(v < 0 for v in lambdas):
        raise ConfigError(f"loss weights must be non-negative, got {lambdas}")
    if not any(v > 0 for v in lambdas):
        raise ConfigError("at least one loss weight must be positive")
    if heads.vocab_size < 1 or heads.punct_classes < 2:
        raise ConfigError("vocab_size >= 1 and punct_classes >= 2 required")
    if train.task not in ("vad", "multitask"):
        raise ConfigError(f"train task must be vad or multitask, got {train.task!r}")
    if train.learning_rate <= 0 or train.clip_norm <= 0 or train.epochs < 1:
        raise ConfigError("learning_rate, clip_norm must be > 0 and epochs >= 1")
    if cfg.eval.grid_ms < 1:
        raise ConfigError("grid_ms must be >= 1")
    if cfg.features.window_ms != 25 or cfg.features.shift_ms != 10 or cfg.features.num_mels != 80:
        raise ConfigError("front end is fixed at 25 ms windows, 10 ms shift, 80 mels")


_TYPE_NAMES = {"int": int, "float": float, "bool": bool, "str": str}

_FIELD_TYPES: dict[str, dict[str, type]] = {
    cls.__name__: {
        f.name: (_TYPE_NAMES[f.type] if isinstance(f.type, str) else f.type)
        for f in dataclasses.fields(cls)
    }
    for cls in _SECTIONS.values()
}


def config_to_text(cfg: PipelineConfig) -> str:
    """Render a config back to parseable text (all keys explicit)."""
    lines: list[str] = []
    for section_name in _SECTIONS:
        obj = getattr(cfg, section_name)
        lines.append(f"[{section_name}]")
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        lines.append("")
    return "\n".join(lines)
