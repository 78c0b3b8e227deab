"""Run configuration and the flat ``key = value`` text format.

Keys are dotted paths into the nested dataclasses, e.g.::

    mode = pretrain
    preset = desk
    model.variant = video_lamae
    model.encoder.embed_dim = 16
    schedule.base_lr = 1e-4

``preset`` (desk or full) selects the model defaults before any other
``model.*`` key is applied, whatever its position in the file.
"""

from __future__ import annotations

import dataclasses
import hashlib
import types
import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

from .data.synthetic import SyntheticConfig
from .errors import ConfigError
from .model import ModelConfig
from .optim import ScheduleConfig

MODES = ("pretrain", "finetune_full", "finetune_frozen", "eval", "generate")
PRESETS = ("desk", "full")


@dataclass(frozen=True)
class RunConfig:
    mode: str = "pretrain"
    preset: str = "desk"
    model: ModelConfig = field(default_factory=ModelConfig.desk)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    batch_size: int = 16
    accum_steps: int = 1
    epochs: int = 100
    max_steps: int = 0
    seed: int = 0
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    augment: bool = False
    pixel_mean: float = 0.0
    pixel_std: float = 1.0
    f1_threshold: float = 0.5
    n_studies: int = 32
    val_fraction: float = 0.0
    frame_format: str = "npy"
    manifest: str = ""
    init_checkpoint: str = ""
    resume: str = ""
    out: str = "runs/default"
    checkpoint_every: int = 0
    prefetch: int = 2
    split: str = "train"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.batch_size < 1 or self.accum_steps < 1:
            raise ConfigError("batch_size and accum_steps must be positive")
        if self.batch_size % self.accum_steps:
            raise ConfigError("accum_steps must divide batch_size")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.pixel_std <= 0:
            raise ConfigError("pixel_std must be positive")
        if self.frame_format not in ("pgm", "npy"):
            raise ConfigError(f"unknown frame_format {self.frame_format!r}")

    @property
    def is_finetune(self) -> bool:
        return self.mode.startswith("finetune")

    @property
    def frozen(self) -> bool:
        return self.mode == "finetune_frozen"

    def check_paths(self) -> None:
        if self.mode in ("pretrain", "finetune_full", "finetune_frozen", "eval") and not self.manifest:
            raise ConfigError(f"mode {self.mode} needs a manifest")
        if self.is_finetune and not (self.init_checkpoint or self.resume):
            raise ConfigError("finetuning needs a pretrained checkpoint (init_checkpoint)")
        if self.mode == "eval" and not self.init_checkpoint:
            raise ConfigError("eval needs a checkpoint (init_checkpoint)")


def _hints(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _coerce(raw: str, tp: Any, key: str) -> Any:
    text = raw.strip()
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if text.lower() in ("none", "null", ""):
            return None
        return _coerce(text, args[0], key)
    try:
        if tp is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {tp.__name__}") from None
    raise ConfigError(f"{key}: unsupported field type {tp}")


def _set(obj: Any, path: list[str], raw: str, key: str) -> Any:
    hints = _hints(type(obj))
    name = path[0]
    if name not in hints:
        raise ConfigError(f"unknown config key {key!r}")
    tp = hints[name]
    if len(path) == 1:
        if is_dataclass(tp):
            raise ConfigError(f"{key} is a section; set one of its fields")
        value = _coerce(raw, tp, key)
    else:
        if not is_dataclass(tp):
            raise ConfigError(f"unknown config key {key!r}")
        value = _set(getattr(obj, name), path[1:], raw, key)
    try:
        return replace(obj, **{name: value})
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def parse_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        pairs.append((key, value))
    return pairs


def apply_overrides(cfg: RunConfig, pairs: list[tuple[str, str]]) -> RunConfig:
    """Apply ``(key, value)`` pairs; model edits go through a raw dict so that
    validation runs once on the final combination rather than per key."""
    pairs = list(pairs)
    presets = [v for k, v in pairs if k == "preset"]
    if presets:
        preset = presets[-1]
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        variant = next((v for k, v in reversed(pairs) if k == "model.variant"), cfg.model.variant)
        base = ModelConfig.desk(variant) if preset == "desk" else ModelConfig.full(variant)
        cfg = replace(cfg, preset=preset, model=base)
        pairs = [(k, v) for k, v in pairs if k != "preset"]
    model_pairs = [(k[len("model.") :], v) for k, v in pairs if k.startswith("model.")]
    if model_pairs:
        cfg = replace(cfg, model=_apply_model(cfg.model, model_pairs))
    for key, value in pairs:
        if not key.startswith("model."):
            cfg = _set(cfg, key.split("."), value, key)
    return cfg


def _apply_model(model: ModelConfig, pairs: list[tuple[str, str]]) -> ModelConfig:
    values = {f.name: getattr(model, f.name) for f in fields(model)}
    hints = _hints(ModelConfig)
    for key, raw in pairs:
        path = key.split(".")
        name = path[0]
        if name not in hints:
            raise ConfigError(f"unknown config key 'model.{key}'")
        if len(path) == 1:
            if is_dataclass(hints[name]):
                raise ConfigError(f"model.{key} is a section; set one of its fields")
            values[name] = _coerce(raw, hints[name], f"model.{key}")
        else:
            if not is_dataclass(hints[name]):
                raise ConfigError(f"unknown config key 'model.{key}'")
            values[name] = _set(values[name], path[1:], raw, f"model.{key}")
    keys = {k for k, _ in pairs}
    if "task" in keys and "num_outputs" not in keys and values["task"] == "regression":
        values["num_outputs"] = 1
    # The MAE variants clamp LA depth on construction; rebuilding from the raw
    # values keeps a later variant switch from inheriting a clamped stack.
    try:
        return ModelConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    return apply_overrides(base or RunConfig(), parse_pairs(text))


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), base)


def _flatten(obj: Any, prefix: str = "") -> list[tuple[str, Any]]:
    out = []
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.extend(_flatten(value, key + "."))
        else:
            out.append((key, value))
    return out


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    """Every field, one per line; parsing the output reproduces ``cfg``."""
    lines = []
    for key, value in _flatten(cfg):
        lines.append(f"{key} = {_format(value)}")
    return "\n".join(lines) + "\n"


# Where a run reads or writes checkpoints does not change what it computes.
_LOCATION_KEYS = ("out", "init_checkpoint", "resume")


def config_hash(cfg: RunConfig) -> str:
    """Short digest of everything that affects results (output locations excluded)."""
    text = dump_config(replace(cfg, **{k: "" for k in _LOCATION_KEYS}))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
