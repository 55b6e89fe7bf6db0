"""
This module defines the exception hierarchy shared by the toolkit.
Usage and configuration problems derive from `UsageError` so the command line can
map them to exit code 1; every other `OrthrosError` is a runtime failure (exit code 2).
"""

from typing import Any


class OrthrosError(Exception):
    """Base class for all toolkit errors."""

    def __init__(self, message: str, details: dict[str, Any] | None = None):
        super().__init__(message)
        self.details = details or {}


class UsageError(OrthrosError):
    """Raised when an operation is called with arguments outside its contract."""


class ConfigError(UsageError):
    """Raised when a configuration value or combination of values is invalid."""
