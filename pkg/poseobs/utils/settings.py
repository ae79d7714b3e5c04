"""
Runtime configuration read from the environment (and .env via app.py).
"""

import logging
import os
from pathlib import Path

logger = logging.getLogger(__name__)


class ConfigError(RuntimeError):
    """Raised when the environment configuration is unusable."""


def _float_env(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got '{raw}'")
    if not value > 0.0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


# Where `run` writes CSV and plot data when no explicit path is given
OUTPUT_DIR = os.getenv("POSEOBS_OUTPUT_DIR", "results")
LOG_LEVEL = os.getenv("POSEOBS_LOG_LEVEL", "INFO").upper()
DEFAULT_DT = _float_env("POSEOBS_DEFAULT_DT", 1e-3)
DEFAULT_DURATION = _float_env("POSEOBS_DEFAULT_DURATION", 60.0)


def ensure_output_dir(path: str) -> Path:
    """Create `path` (and parents) if needed and return it."""
    directory = Path(path)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"Cannot create output directory {directory}: {e}")
    if not os.access(directory, os.W_OK):
        raise ConfigError(f"Output directory {directory} is not writable")
    return directory
