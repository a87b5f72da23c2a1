"""Unit tests for logger setup and level handling."""

import logging

import pytest

from src.utils.logger import configure_root_logger, get_logger, parse_level


class TestLogger:
    """Test cases for the logging helpers."""

    def test_parse_level_names(self):
        """Test level names are case-insensitive and constants pass through."""
        assert parse_level("debug") == logging.DEBUG
        assert parse_level(" Warning ") == logging.WARNING
        assert parse_level(logging.ERROR) == logging.ERROR

    def test_parse_level_unknown(self):
        """Test an unknown name raises ValueError."""
        with pytest.raises(ValueError):
            parse_level("chatty")

    def test_single_handler(self):
        """Test repeated lookups do not stack handlers."""
        first = get_logger("src.tests.single_handler")
        second = get_logger("src.tests.single_handler")
        assert first is second
        assert len(first.handlers) == 1
        assert first.propagate is False

    def test_configure_sets_package_loggers(self):
        """Test configuring the root level also updates existing package loggers."""
        logger = get_logger("src.tests.configure")
        try:
            configure_root_logger("debug")
            assert logger.level == logging.DEBUG
        finally:
            configure_root_logger(logging.INFO)
        assert logger.level == logging.INFO
