# config.py: experiment configuration: CLI flag > config file > default
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml
from pydantic import BaseModel, Field, ValidationError

from assignment import SinkhornConfig
from encoding import FeatureConfig
from errors import ConfigError
from learning import TrainConfig
from model import ModelConfig
from multiedge_merge import MergeConfig


class ExperimentConfig(BaseModel):
    model_config = {"extra": "forbid"}

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sinkhorn: SinkhornConfig = Field(default_factory=SinkhornConfig)
    merge: MergeConfig = Field(default_factory=MergeConfig)
    features: FeatureConfig = Field(default_factory=FeatureConfig)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)


def read_config_file(path: Path | str) -> Dict[str, Dict[str, Any]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Malformed config file {path}: {e}") from e

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must map section names to settings")
    sections = ExperimentConfig.model_fields
    for name, values in data.items():
        if name not in sections:
            raise ConfigError(f"Unknown config section '{name}' in {path}")
        if not isinstance(values, dict):
            raise ConfigError(f"Section '{name}' in {path} must be a mapping")
    return data


def resolve_config(path: Optional[Path | str] = None, overrides: Optional[Mapping[str, Mapping[str, Any]]] = None) -> ExperimentConfig:
    """Merge defaults, the optional file and non-None overrides, then validate."""
    data: Dict[str, Dict[str, Any]] = read_config_file(path) if path else {}
    for section, values in (overrides or {}).items():
        for key, value in values.items():
            if value is not None:
                data.setdefault(section, {})[key] = value
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
