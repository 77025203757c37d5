"""JSON run configuration: ``{"model": {...}, "train": {...}}``.

Every field has a default, unknown keys are rejected, and serialization is
canonical (sorted keys, two-space indent) so parse -> serialize round-trips.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .backbone import BackboneConfig
from .errors import ConfigError, FileError
from .train import TrainConfig

SECTIONS = {"model": BackboneConfig, "train": TrainConfig}


def _build(cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid {section!r} section: {e}") from e


@dataclass
class RunConfig:
    model: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
        return cls(**{name: _build(kind, data.get(name, {}), name) for name, kind in SECTIONS.items()})

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise FileError(f"cannot read config {path}: {e}") from e
        return cls.parse(text)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": self.train.to_dict()}

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"
