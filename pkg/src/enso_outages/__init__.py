"""Batch statistics linking ENSO state, extreme weather, and U.S. outages."""

from __future__ import annotations

__version__ = "0.1.0"
