"""Run configuration: nested dataclasses, strict JSON parsing, dotted overrides.

Unknown keys are rejected everywhere so a typo fails the run instead of
silently training with a default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ModelConfig:
    dim: int = 20
    image_vocab: int = 28
    text_vocab: int = 16
    max_tokens: int = 16
    prompts: int = 8
    compositor_layers: int = 4
    heads: int = 1
    positional: bool = True


@dataclass
class ObjectiveConfig:
    alpha: float = 0.45
    beta: float = 0.1
    tau: float = 0.1


@dataclass
class TrainingConfig:
    batch_size: int = 16
    epochs: int = 20
    learning_rate: float = 1e-3
    seed: int = 0


@dataclass
class AblationConfig:
    share_text_projection: bool = True
    share_compositor_branches: bool = False
    attentive_reference: bool = True
    use_alignment: bool = True
    use_reasoning: bool = True


@dataclass
class SynthConfig:
    latent_dim: int = 7
    n_train: int = 512
    n_val: int = 128
    n_attributes: int = 4
    noise_sigma: float = 0.05
    seed: int = 7


@dataclass
class PathsConfig:
    train_set: str = "data/train.jsonl"
    val_set: str = "data/val.jsonl"
    checkpoint: str = "out/checkpoint.json"
    train_log: str = "out/train_log.jsonl"
    report: str = "out/report.json"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


def _from_dict(cls, data: dict, prefix: str = ""):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(prefix + k for k in unknown)}")
    kwargs = {}
    for key, value in data.items():
        f = names[key]
        if dataclasses.is_dataclass(f.type) or f.name in _SECTION_TYPES:
            kwargs[key] = _from_dict(_SECTION_TYPES[key], value, prefix=f"{key}.")
        else:
            kwargs[key] = _coerce(value, _FIELD_TYPES[cls][key], prefix + key)
    return cls(**kwargs)


_SECTION_TYPES = {
    "model": ModelConfig,
    "objective": ObjectiveConfig,
    "training": TrainingConfig,
    "ablation": AblationConfig,
    "synth": SynthConfig,
    "paths": PathsConfig,
}

_FIELD_TYPES = {
    cls: {f.name: f.default.__class__ for f in dataclasses.fields(cls)}
    for cls in (ModelConfig, ObjectiveConfig, TrainingConfig, AblationConfig, SynthConfig, PathsConfig)
}


def _coerce(value, expected, key: str):
    if expected is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    if expected is int:
        if isinstance(value, bool) or (not isinstance(value, (int, str))):
            raise ValueError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ValueError(f"{key}: expected a number, got {value!r}")
        return float(value)
    return str(value)


def config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> RunConfig:
    with Path(path).open("r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def save_config(cfg: RunConfig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_override(cfg: RunConfig, assignment: str) -> RunConfig:
    """Apply one `section.key=value` override, returning a new RunConfig."""
    if "=" not in assignment:
        raise ValueError(f"override {assignment!r} is not of the form key=value")
    dotted, raw = assignment.split("=", 1)
    parts = dotted.strip().split(".")
    if len(parts) != 2 or parts[0] not in _SECTION_TYPES:
        raise ValueError(f"unknown config key {dotted!r}")
    section, key = parts
    section_cls = _SECTION_TYPES[section]
    if key not in _FIELD_TYPES[section_cls]:
        raise ValueError(f"unknown config key {dotted!r}")
    value = _coerce(raw.strip(), _FIELD_TYPES[section_cls][key], dotted)
    new_section = dataclasses.replace(getattr(cfg, section), **{key: value})
    return dataclasses.replace(cfg, **{section: new_section})
