import json
import os
from dataclasses import fields
from typing import Any, Mapping, Optional, Sequence

from flask import Config

from calvin.errors import ConfigError
from calvin.training import TrainConfig

ENV_PREFIX = 'CALVIN'
ROOT_PATH = os.path.dirname(os.path.abspath(__file__))

SCALE_PRESETS = {
    'desk': {'TRAJECTORIES': 1000},
    'full': {'TRAJECTORIES': 4000},
}

EXPERIMENT_PRESETS = {
    'grid-full': {'MOTION': 'positional', 'BACKBONE': 'oracle', 'OBSERVABILITY': 'full', 'BETA': 1.0},
    'grid-partial': {'MOTION': 'positional', 'BACKBONE': 'oracle', 'OBSERVABILITY': 'partial', 'BETA': 0.25},
    'embodied': {'MOTION': 'embodied', 'BACKBONE': 'oracle', 'OBSERVABILITY': 'partial', 'BETA': 0.25},
    'lpn': {'MOTION': 'positional', 'BACKBONE': 'lpn', 'OBSERVABILITY': 'partial', 'BETA': 0.25},
}

PRESETS = {**SCALE_PRESETS, **EXPERIMENT_PRESETS}


def _upper_keys(values: Mapping[str, Any]) -> dict:
    return {key.replace('-', '_').upper(): value for key, value in values.items()}


def load_config(
    overrides: Optional[Mapping[str, Any]] = None,
    config_file: Optional[str] = None,
    presets: Sequence[str] = (),
) -> Config:
    """Layer defaults, presets, a JSON file, ``CALVIN_*`` variables and overrides, in that order."""
    config = Config(ROOT_PATH)
    config.from_object('App.default_config')
    if os.path.exists(os.path.join(ROOT_PATH, 'custom_config.py')):
        config.from_object('App.custom_config')

    for name in presets:
        if name not in PRESETS:
            raise ConfigError(f"Unknown preset '{name}'; expected one of {sorted(PRESETS)}")
        config.update(PRESETS[name])

    if config_file:
        try:
            with open(config_file, encoding='utf-8') as handle:
                document = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f'Cannot read config file {config_file}: {exc}') from exc
        if not isinstance(document, dict):
            raise ConfigError(f'Config file {config_file} must hold a JSON object')
        config.update(_upper_keys(document))

    config.from_prefixed_env(ENV_PREFIX)

    config.update(_upper_keys(overrides or {}))
    return config


def build_train_config(config: Mapping[str, Any]) -> TrainConfig:
    """The validated training configuration described by ``config``."""
    values = {f.name: config[f.name.upper()] for f in fields(TrainConfig) if f.name.upper() in config}
    try:
        return TrainConfig.from_mapping(values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
