"""Run configuration: one flat dataclass, serialized as sectioned
`key = value` text (configparser syntax).

Precedence is file < explicit overrides (CLI flags), and every command
echoes the effective config into its output directory so a run can be
reproduced from its artifacts alone.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass
from pathlib import Path

from .backbone import EncoderConfig
from .errors import ValidationError
from .model import ModelConfig


@dataclass(frozen=True)
class RunConfig:
    # data
    data_root: str = ""
    split_ratio: float = 0.9
    split_seed: int = 0
    # model
    stage_channels: tuple[int, ...] = (16, 32, 64)
    total_stride: int = 8
    feature_channels: int = 64
    use_sfm: bool = True
    use_msff: bool = True
    pooling: str = "both"
    encoder_tap: int = 4
    prior_mask_mapping: bool = True
    similarity: str = "standard"
    key_scaling: bool = True
    key_from_gated: bool = False
    use_current_value: bool = False
    hard_prior: bool = False
    memory_capacity: int = 0        # 0 means unlimited
    fc_reduction: int = 4
    # train
    learning_rate: float = 1e-2
    momentum: float = 0.0
    steps: int = 200
    log_every: int = 20
    loss_window: int = 20
    teacher_forcing: bool = False
    # run
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ValidationError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.steps < 0 or self.learning_rate <= 0.0:
            raise ValidationError("steps must be >= 0 and learning_rate > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.loss_window < 1 or self.log_every < 1:
            raise ValidationError("loss_window and log_every must be >= 1")
        self.model_config()   # surfaces model-side validation early

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(stage_channels=tuple(self.stage_channels),
                             total_stride=self.total_stride,
                             feature_channels=self.feature_channels)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            encoder=self.encoder_config(),
            use_sfm=self.use_sfm,
            use_msff=self.use_msff,
            pooling=self.pooling,
            encoder_tap=self.encoder_tap,
            prior_mask_mapping=self.prior_mask_mapping,
            similarity=self.similarity,
            key_scaling=self.key_scaling,
            key_from_gated=self.key_from_gated,
            use_current_value=self.use_current_value,
            hard_prior=self.hard_prior,
            memory_capacity=self.memory_capacity or None,
            fc_reduction=self.fc_reduction,
        )


_SECTIONS = {
    "data": ("data_root", "split_ratio", "split_seed"),
    "model": ("stage_channels", "total_stride", "feature_channels", "use_sfm",
              "use_msff", "pooling", "encoder_tap", "prior_mask_mapping",
              "similarity", "key_scaling", "key_from_gated", "use_current_value",
              "hard_prior", "memory_capacity", "fc_reduction"),
    "train": ("learning_rate", "momentum", "steps", "log_every", "loss_window",
              "teacher_forcing"),
    "run": ("seed",),
}

_FIELD_SECTION = {name: section for section, names in _SECTIONS.items() for name in names}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    parts = text.replace(",", " ").split()
    if not parts:
        raise ValidationError("expected a comma-separated list of integers")
    return tuple(int(p) for p in parts)


_COERCERS = {
    "data_root": str,
    "split_ratio": float,
    "split_seed": int,
    "stage_channels": _parse_int_tuple,
    "total_stride": int,
    "feature_channels": int,
    "use_sfm": _parse_bool,
    "use_msff": _parse_bool,
    "pooling": str,
    "encoder_tap": int,
    "prior_mask_mapping": _parse_bool,
    "similarity": str,
    "key_scaling": _parse_bool,
    "key_from_gated": _parse_bool,
    "use_current_value": _parse_bool,
    "hard_prior": _parse_bool,
    "memory_capacity": int,
    "fc_reduction": int,
    "learning_rate": float,
    "momentum": float,
    "steps": int,
    "log_every": int,
    "loss_window": int,
    "teacher_forcing": _parse_bool,
    "seed": int,
}


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def config_to_text(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    for section, names in _SECTIONS.items():
        parser[section] = {name: _render_value(getattr(cfg, name)) for name in names}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _coerce_items(items) -> dict:
    values = {}
    for key, raw in items:
        if key not in _COERCERS:
            raise ValidationError(f"unknown config key {key!r}")
        try:
            values[key] = _COERCERS[key](raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ValidationError(f"config key {key!r}: {exc}") from exc
    return values


def config_from_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.read_string(text)
    items = []
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValidationError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            if _FIELD_SECTION.get(key) != section:
                raise ValidationError(f"key {key!r} does not belong in section [{section}]")
            items.append((key, raw))
    return RunConfig(**_coerce_items(items))


def load_config(path) -> RunConfig:
    return config_from_text(Path(path).read_text())


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(config_to_text(cfg))


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Replace fields from a {name: value} dict; strings are coerced."""
    clean = _coerce_items((k, v) for k, v in overrides.items() if v is not None)
    return dataclasses.replace(cfg, **clean) if clean else cfg
