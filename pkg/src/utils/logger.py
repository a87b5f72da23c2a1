"""
Centralized logging configuration for the constrained RL toolkit.

Provides structured logging with DEBUG, INFO, WARNING, and ERROR levels.
"""

import logging
import sys
from typing import Optional, Union

DEFAULT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def setup_logger(
    name: str,
    level: int = logging.INFO,
    format_string: Optional[str] = None,
) -> logging.Logger:
    """
    Set up a structured logger with consistent formatting.

    Args:
        name: Logger name (typically __name__ of the calling module)
        level: Logging level (default: INFO)
        format_string: Custom format string (optional)

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)

    # Avoid adding multiple handlers if logger already configured
    if logger.handlers:
        return logger

    logger.setLevel(level)

    handler = logging.StreamHandler(sys.stdout)
    handler.setLevel(logging.NOTSET)

    formatter = logging.Formatter(format_string or DEFAULT_FORMAT, datefmt=DATE_FORMAT)
    handler.setFormatter(formatter)
    logger.addHandler(handler)

    # Records are emitted by our own handler; the root logger stays quiet
    logger.propagate = False

    return logger


def get_logger(name: str) -> logging.Logger:
    """
    Get or create a logger with default configuration.

    Args:
        name: Logger name (typically __name__ of the calling module)

    Returns:
        Logger instance
    """
    return setup_logger(name)


def parse_level(level: Union[int, str]) -> int:
    """Translate a level name such as "debug" into a logging constant."""
    if isinstance(level, int):
        return level
    value = logging.getLevelName(str(level).strip().upper())
    if not isinstance(value, int):
        raise ValueError(f"Unknown log level: {level}")
    return value


def configure_root_logger(level: Union[int, str] = logging.INFO) -> None:
    """
    Configure logging for the entire application.

    Sets the root logger and every logger already created under the
    ``src`` namespace to the requested level.

    Args:
        level: Logging level (constant or name)
    """
    numeric = parse_level(level)
    logging.basicConfig(
        level=numeric,
        format=DEFAULT_FORMAT,
        datefmt=DATE_FORMAT,
        handlers=[logging.StreamHandler(sys.stdout)],
    )
    logging.getLogger().setLevel(numeric)
    for name, logger in logging.Logger.manager.loggerDict.items():
        if name.startswith("src") and isinstance(logger, logging.Logger):
            logger.setLevel(numeric)
