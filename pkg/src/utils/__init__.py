"""Utility modules for the constrained RL toolkit."""

from .logger import setup_logger, get_logger, configure_root_logger

__all__ = ["setup_logger", "get_logger", "configure_root_logger"]
