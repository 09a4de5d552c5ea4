"""Experiment configuration: JSON file plus dotted-key overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .classify import SvmParams
from .codebook import KmeansParams
from .encoding import EncoderConfig
from .errors import InvalidInputError
from .features import SiftParams
from .pyramid import PyramidParams

_SECTIONS = {
    "sift": SiftParams,
    "kmeans": KmeansParams,
    "encoder": EncoderConfig,
    "pyramid": PyramidParams,
    "svm": SvmParams,
}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = ""
    per_class_train: int = 50
    trials: int = 5
    base_seed: int = 0
    max_per_image: int = 200
    codebook: str | None = None
    output: str = "results"
    workers: int = 1
    save_model: bool = False
    save_features: bool = False
    sift: SiftParams = field(default_factory=SiftParams)
    kmeans: KmeansParams = field(default_factory=KmeansParams)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pyramid: PyramidParams = field(default_factory=PyramidParams)
    svm: SvmParams = field(default_factory=SvmParams)

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidInputError("trials must be >= 1")
        if self.per_class_train < 1:
            raise InvalidInputError("per_class_train must be >= 1")
        if self.max_per_image < 1 or self.workers < 1:
            raise InvalidInputError("max_per_image and workers must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pyramid"]["levels"] = list(self.pyramid.levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        top = {f.name for f in fields(cls)}
        unknown = set(d) - top
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        for name, typ in _SECTIONS.items():
            if name in d and not isinstance(d[name], typ):
                sub = dict(d[name])
                allowed = {f.name for f in fields(typ)}
                bad = set(sub) - allowed
                if bad:
                    raise InvalidInputError(f"unknown {name} keys: {sorted(bad)}")
                d[name] = typ(**sub)
        return cls(**d)

    def with_overrides(self, overrides: dict[str, Any]) -> "ExperimentConfig":
        """Apply ``{"encoder.lam": 0.5, "trials": 1}``-style overrides."""
        d = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            target = d
            *path, leaf = key.split(".")
            for p in path:
                if p not in target or not isinstance(target[p], dict):
                    raise InvalidInputError(f"unknown config section in {key!r}")
                target = target[p]
            if leaf not in target:
                raise InvalidInputError(f"unknown config key {key!r}")
            target[leaf] = value
        return ExperimentConfig.from_dict(d)

    def for_encoder(self, variant: str) -> "ExperimentConfig":
        return replace(self, encoder=replace(self.encoder, variant=variant))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def parse_value(text: str) -> Any:
    """Interpret an override value as JSON when possible, else as a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text
