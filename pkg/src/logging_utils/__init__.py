"""
Logging configuration and utility functions for traitscale.
Provides a centralized logging setup with YAML configuration and convenience methods.
"""

import logging
import logging.config
import os
import time
from typing import Any, Optional

import yaml
from dotenv import load_dotenv

# Setup paths
script_dir = os.path.dirname(os.path.abspath(__file__))
parent_dir = os.path.dirname(script_dir)
logging_config_path = os.path.join(parent_dir, 'logging.yaml')

ROOT_LOGGER_NAME = "traitscale"

isInitialized = False


def init_logging() -> None:
    """Initialize logging configuration from YAML file.

    The level of the ``traitscale`` logger can be overridden with the
    ``TRAITSCALE_LOG_LEVEL`` environment variable (also read from ``.env``).
    """
    global isInitialized
    if isInitialized:
        return
    isInitialized = True
    try:
        with open(logging_config_path, 'rt') as f:
            config = yaml.safe_load(f.read())
        logging.config.dictConfig(config)
    except (OSError, yaml.YAMLError, ValueError) as e:
        # Fallback to basic configuration if YAML loading fails
        logging.basicConfig(
            level=logging.INFO,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )
        logging.error(f"Failed to load logging config from {logging_config_path}: {e}")

    load_dotenv()
    level = os.getenv("TRAITSCALE_LOG_LEVEL")
    if level:
        get_logger().setLevel(level.upper())


def get_logger(name: str = ROOT_LOGGER_NAME) -> logging.Logger:
    """
    Get a logger instance with the specified name.

    Args:
        name: Logger name, defaults to "traitscale". Stage modules pass a
            dotted child name such as "traitscale.gapfill".

    Returns:
        logging.Logger: Configured logger instance
    """
    return logging.getLogger(name)


class StageTimer:
    """Context manager logging the start and wall time of a pipeline stage.

    The elapsed seconds are available as ``elapsed`` after the block exits,
    also when the block raised.
    """

    def __init__(self, stage: str, logger: Optional[logging.Logger] = None):
        self.stage = stage
        self.logger = logger or get_logger()
        self.elapsed = 0.0
        self._start = 0.0

    def __enter__(self) -> "StageTimer":
        self.logger.info(f"[{self.stage}] started")
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        self.elapsed = time.perf_counter() - self._start
        if exc_type is None:
            self.logger.info(f"[{self.stage}] finished in {self.elapsed:.2f}s")
        else:
            self.logger.error(f"[{self.stage}] failed after {self.elapsed:.2f}s: {exc}")
        return False


def log_info(*args: Any) -> None:
    """Log an INFO level message."""
    get_logger().info(*args)


def log_debug(*args: Any) -> None:
    """Log a DEBUG level message."""
    get_logger().debug(*args)


def log_warn(*args: Any) -> None:
    """Log a WARNING level message."""
    get_logger().warning(*args)


def log_error(*args: Any, **kwargs: Any) -> None:
    """
    Log an ERROR level message.

    Args:
        *args: Message and arguments to log
        **kwargs: Additional logging parameters (e.g., exc_info, stack_info)
    """
    get_logger().error(*args, **kwargs)


def log_exception(*args: Any, **kwargs: Any) -> None:
    """
    Log an exception with traceback at ERROR level.

    Args:
        *args: Message and arguments to log
        **kwargs: Additional logging parameters (e.g., exc_info, stack_info)
    """
    get_logger().exception(*args, **kwargs)


# Initialize logging when module is imported
init_logging()
