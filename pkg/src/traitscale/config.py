"""Configuration module for traitscale.

Environment defaults come from ``.env``; run parameters live in a YAML file
validated by ``PipelineConfig``.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Base directory of the project
BASE_DIR = Path(__file__).parent.parent.parent

SCHEMA_DIR = Path(os.getenv("TRAITSCALE_SCHEMA_DIR", str(BASE_DIR / "doc")))

# Debug mode
DEBUG = os.getenv("DEBUG", "False").lower() in ("true", "1", "t")

DEFAULT_N_JOBS = int(os.getenv("TRAITSCALE_N_JOBS", "1"))
DEFAULT_SEED = int(os.getenv("TRAITSCALE_SEED", "0"))


class ConfigError(ValueError):
    """Raised when a configuration file cannot be read or fails validation."""
