"""
Runtime settings loaded from the process environment.

Development: values can live in a local .env file (loaded with python-dotenv).
Experiments themselves are described by JSON files, see experiment.py.
"""
import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()


class EnvSettings:
    """Reads settings from the environment with a fallback default."""

    @staticmethod
    def get(key: str, default: Optional[str] = None) -> Optional[str]:
        # An explicitly set, non-empty variable wins over the default
        if key in os.environ and os.environ[key]:
            return os.environ[key]
        return default

    @staticmethod
    def get_bool(key: str, default: bool = False) -> bool:
        raw = EnvSettings.get(key, 'true' if default else 'false')
        return str(raw).lower() in ('1', 'true', 'yes')


class Config:
    """Process-wide settings."""

    LOG_LEVEL = EnvSettings.get('MOPG_LOG_LEVEL', 'INFO')
    JOBS = int(EnvSettings.get('MOPG_JOBS', '1'))
    OUTPUT_DIR = EnvSettings.get('MOPG_OUTPUT_DIR', 'runs')
    # Wall-clock timings make run CSVs differ between invocations
    RECORD_TIMING = EnvSettings.get_bool('MOPG_RECORD_TIMING', False)

    @classmethod
    def validate(cls) -> bool:
        """Check the settings that have a constrained range."""
        import logging

        if cls.JOBS == 0:
            from .logger import logger
            logger.error('MOPG_JOBS must be non-zero (use -1 for all cores)')
            return False
        if not isinstance(getattr(logging, str(cls.LOG_LEVEL).upper(), None), int):
            from .logger import logger
            logger.error('Unknown MOPG_LOG_LEVEL %s', cls.LOG_LEVEL)
            return False
        return True
