"""Exception types shared across the toolkit."""

from __future__ import annotations


class IcpackError(Exception):
    """Base class for all toolkit errors."""


class FormatError(IcpackError):
    """A persisted artifact is malformed (bad magic, version, or truncation)."""


class ConfigError(IcpackError):
    """Pipeline configuration is invalid (unknown key, bad type or value)."""


class StageError(IcpackError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
