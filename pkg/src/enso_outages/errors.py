"""Exception types shared across the package."""

from __future__ import annotations


class IngestError(Exception):
    """A data file could not be read or failed validation."""


class TableFormatError(IngestError):
    """A delimited text table is missing required columns or rows."""


class GridFormatError(IngestError):
    """A binary grid file is malformed."""


class RegionMapError(IngestError):
    """A region map is incomplete, ambiguous, or references unknown ids."""


class DegenerateSeriesError(ValueError):
    """A statistic is undefined because a series has no variance."""


class StageDependencyError(RuntimeError):
    """A pipeline stage was requested before the stages it depends on ran."""


class ConfigError(Exception):
    """A run configuration is invalid."""
