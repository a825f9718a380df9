"""Pipeline configuration: one JSON document, every field defaulted.

Sections map onto the dataclasses the library already uses; unknown keys
at any level are rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional

from .datagen import SynthConfig
from .losses import LossConfig
from .metrics import EvalConfig
from .relation_net import NetConfig
from .training import TrainConfig

# switched through the ``ablation`` section, not the ``net`` section
_FLAG_FIELDS = ("use_mfe", "use_mim", "use_asm")
# taken from the vocabulary and the data, never from the config file
_DERIVED_NET_FIELDS = ("num_object_categories", "num_predicates", "person_category", "visual_dim")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    detections: str = "data/detections.jsonl"
    embeddings: str = "data/embeddings.bin"
    vocabulary: str = "data/vocabulary.json"
    ground_truth: str = "data/ground_truth.jsonl"
    checkpoint: str = "run/model.ckpt"
    train_log: str = "run/train_log.jsonl"
    predictions: str = "run/predictions.jsonl"
    report: str = "run/report.json"


@dataclass(frozen=True)
class AblationFlags:
    use_mfe: bool = True
    use_mim: bool = True
    use_asm: bool = True

    def __post_init__(self) -> None:
        if self.use_mim and not self.use_mfe:
            raise ConfigError("use_mim requires use_mfe (removing motion features also removes the interaction)")

    def without(self, name: str) -> "AblationFlags":
        if name == "mfe":
            return replace(self, use_mfe=False, use_mim=False)
        if name == "mim":
            return replace(self, use_mim=False)
        if name == "asm":
            return replace(self, use_asm=False)
        raise ConfigError(f"unknown ablation {name!r}")


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    net: NetConfig = field(default_factory=NetConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    train: TrainConfig = field(default_factory=TrainConfig)

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, synth=replace(self.synth, seed=seed), train=replace(self.train, seed=seed))

    def with_ablation(self, name: str) -> "PipelineConfig":
        return replace(self, ablation=self.ablation.without(name))

    def net_config(self, num_predicates: int, num_object_categories: int, person_category: int, visual_dim: int) -> NetConfig:
        """Network config with flags and data-dependent sizes filled in."""
        return replace(
            self.net,
            use_mfe=self.ablation.use_mfe,
            use_mim=self.ablation.use_mim,
            use_asm=self.ablation.use_asm,
            num_predicates=num_predicates,
            num_object_categories=num_object_categories,
            person_category=person_category,
            visual_dim=visual_dim,
        )

    def to_dict(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        for name in _FLAG_FIELDS + _DERIVED_NET_FIELDS:
            out["net"].pop(name)
        return out


def _build(cls, data: Any, where: str, skip=()):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {unknown}")
    kwargs = {}
    for key, value in data.items():
        factory = names[key].default_factory
        if isinstance(factory, type) and dataclasses.is_dataclass(factory):
            kwargs[key] = _build(factory, value, f"{where}.{key}")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


_SECTIONS = {
    "paths": (Paths, ()),
    "net": (NetConfig, _FLAG_FIELDS + _DERIVED_NET_FIELDS),
    "loss": (LossConfig, ()),
    "eval": (EvalConfig, ()),
    "synth": (SynthConfig, ()),
    "ablation": (AblationFlags, ()),
    "train": (TrainConfig, ()),
}


def config_from_dict(data: Dict[str, Any]) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s) {unknown}")
    kwargs = {}
    for name, value in data.items():
        cls, skip = _SECTIONS[name]
        kwargs[name] = _build(cls, value, name, skip)
    return PipelineConfig(**kwargs)


def load_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return config_from_dict(data)


__all__ = ["AblationFlags", "ConfigError", "Paths", "PipelineConfig", "config_from_dict", "load_config"]
