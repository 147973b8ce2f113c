import logging
from typing import Any, Mapping, Optional, Sequence

from dotenv import load_dotenv
from flask import Config

from App.config import load_config
from App.logging_config import configure_logging

logger = logging.getLogger(__name__)


def create_runtime(
    overrides: Optional[Mapping[str, Any]] = None,
    config_file: Optional[str] = None,
    presets: Sequence[str] = (),
) -> Config:
    # Load environment variables from .env if present
    load_dotenv()
    config = load_config(overrides, config_file, presets)

    configure_logging(config)
    logger.info(
        'Runtime configured',
        extra={
            'event': 'runtime_boot',
            'environment': config.get('ENV'),
            'presets': list(presets),
            'service': config.get('SERVICE_NAME', 'calvin-planner'),
        },
    )
    return config
