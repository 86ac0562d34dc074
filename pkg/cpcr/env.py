"""Environment loading and logging setup for the cpcr command line tools."""

import logging
import os
import sys
from pathlib import Path
from typing import Optional, Union

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

ENV_FILES = ['.env.local', '.env', '.env.example']
LOG_LEVELS = {
    'DEBUG': logging.DEBUG,
    'INFO': logging.INFO,
    'WARNING': logging.WARNING,
    'ERROR': logging.ERROR,
}


def load_environment(base_dir: Optional[Path] = None) -> bool:
    """Load environment variables from .env files in order of precedence.

    Order of precedence:
    1. System environment variables (already loaded)
    2. .env.local (user-specific overrides)
    3. .env (project defaults)
    4. .env.example (example configuration)

    Returns:
        bool: True if at least one file was loaded
    """
    base_dir = base_dir or Path('.')
    env_loaded = False
    for env_file in ENV_FILES:
        env_path = base_dir / env_file
        if env_path.exists():
            load_dotenv(dotenv_path=env_path)
            env_loaded = True
            logger.debug(f"Loaded environment variables from {env_file}")
    if not env_loaded:
        logger.debug("No .env files found. Using system environment variables only.")
    return env_loaded


def resolve_log_level(value: Optional[str] = None) -> int:
    """Map a CPCR_LOG value to a logging level (unknown values fall back to INFO)."""
    if value is None:
        value = os.getenv('CPCR_LOG', 'INFO')
    return LOG_LEVELS.get(value.strip().upper(), logging.INFO)


def setup_logging(level: Optional[Union[int, str]] = None) -> None:
    if level is None or isinstance(level, str):
        level = resolve_log_level(level)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
        force=True,
    )
