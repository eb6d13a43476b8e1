#!/usr/bin/env python3
"""
⚙️ Pipeline Core - configuration for every stage of the toolkit.

Resolves the settings a run uses, in increasing precedence:

    built-in defaults (config/config.yaml) < preset < user config file < flags

and hands out typed config objects for the codec, loss, model, training and
synthetic-page stages.
"""

import copy
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import yaml

from .codec import CodecConfig
from .errors import ConfigError, InputFileError
from .loss import LossWeights
from .model import ModelConfig
from .synth import SynthConfig
from .training import TrainSettings

logger = logging.getLogger(__name__)

BUILTIN_CONFIG = Path(__file__).parent.parent / "config" / "config.yaml"


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise InputFileError(path, "config file not found")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"could not parse config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping, got {type(data).__name__}")
    return data


class PipelineCore:
    """
    ⚙️ Resolved configuration for one run

    Holds the merged config mapping and builds the typed configs from it.
    """

    def __init__(
        self,
        config_path: Optional[Union[str, Path]] = None,
        preset: Optional[str] = None,
        overrides: Optional[Dict[str, Any]] = None,
    ):
        self.config_path = Path(config_path) if config_path else self._find_config_file()
        self.config = self.load_config(preset, overrides or {})

    def _find_config_file(self) -> Optional[Path]:
        """Find a user config.yaml in the working directory"""
        candidate = Path.cwd() / "config.yaml"
        return candidate if candidate.exists() else None

    def get_default_config(self) -> Dict[str, Any]:
        """Built-in defaults shipped with the package"""
        return read_yaml(BUILTIN_CONFIG)

    def load_config(self, preset: Optional[str], overrides: Dict[str, Any]) -> Dict[str, Any]:
        defaults = self.get_default_config()
        user = read_yaml(self.config_path) if self.config_path else {}
        presets = deep_merge(defaults.get("presets", {}), user.get("presets", {}))

        name = preset or user.get("preset") or defaults.get("preset", "paper-w32")
        if name not in presets:
            raise ConfigError(f"unknown preset '{name}', choose from {sorted(presets)}")

        user = {k: v for k, v in user.items() if k != "presets"}
        config = deep_merge(defaults, presets[name] or {})
        config = deep_merge(config, user)
        config = deep_merge(config, overrides)
        config["preset"] = name
        config.pop("presets", None)
        if self.config_path:
            logger.debug("loaded config %s with preset %s", self.config_path, name)
        return config

    def section(self, name: str) -> Dict[str, Any]:
        value = self.config.get(name) or {}
        if not isinstance(value, dict):
            raise ConfigError(f"config section '{name}' must be a mapping")
        return value

    def _build(self, name: str, factory: Any) -> Any:
        try:
            return factory(self.section(name))
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(f"invalid '{name}' config: {e}") from e

    def model_config(self) -> ModelConfig:
        return self._build("model", ModelConfig.from_dict)

    def codec_config(self) -> CodecConfig:
        return self._build("codec", CodecConfig.from_dict)

    def loss_weights(self) -> LossWeights:
        return self._build("loss", LossWeights.from_dict)

    def train_settings(self) -> TrainSettings:
        return self._build("training", TrainSettings.from_dict)

    def synth_config(self) -> SynthConfig:
        return self._build("synth", SynthConfig.from_dict)

    def logging_settings(self) -> Dict[str, Any]:
        return self.section("logging")
