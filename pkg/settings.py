"""
Runtime configuration
Reads .env / environment variables and flat key = value experiment files
"""

import logging
import os
from dataclasses import dataclass
from typing import Dict, Iterable, Optional

from errors import ConfigError

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_dotenv_loaded = False


def _load_env_file() -> None:
    """Load .env once; an unreadable file is not fatal"""
    global _dotenv_loaded
    if _dotenv_loaded:
        return
    _dotenv_loaded = True
    try:
        from dotenv import load_dotenv
        load_dotenv()
    except (ImportError, PermissionError, OSError):
        pass


@dataclass(frozen=True)
class RuntimeSettings:
    model_path: Optional[str] = None
    workers: int = 1
    log_level: str = "INFO"
    port: int = 8000


def load_runtime_settings() -> RuntimeSettings:
    _load_env_file()
    try:
        workers = int(os.getenv('RLDA_WORKERS', '1'))
        port = int(os.getenv('PORT', '8000'))
    except ValueError as e:
        raise ConfigError(f"Invalid integer in environment: {e}") from e
    return RuntimeSettings(
        model_path=os.getenv('RLDA_MODEL_PATH') or None,
        workers=max(1, workers),
        log_level=os.getenv('RLDA_LOG_LEVEL', 'INFO').upper(),
        port=port,
    )


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)


def read_config_file(path: str, allowed_keys: Iterable[str]) -> Dict[str, str]:
    """
    Parse a flat key = value experiment file.

    Keys are CLI flag names without the leading dashes; '-' and '_' are
    interchangeable. Returned keys use argparse dest form (underscores).
    """
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    try:
        from dotenv import dotenv_values
    except ImportError as e:
        raise ConfigError("python-dotenv is required to read config files") from e

    allowed = {k.replace('-', '_') for k in allowed_keys}
    values = {}
    for raw_key, value in dotenv_values(path).items():
        key = raw_key.strip().lstrip('-').replace('-', '_')
        if key not in allowed:
            raise ConfigError(f"Unknown config key '{raw_key}' in {path}")
        if value is None:
            raise ConfigError(f"Config key '{raw_key}' has no value in {path}")
        values[key] = value.strip()
    return values
