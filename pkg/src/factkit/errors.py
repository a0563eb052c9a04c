"""Error types shared across the toolkit.

Every data-level failure raises a :class:`FactkitError` subclass so the CLI
can map them to exit code 2 uniformly.
"""

from __future__ import annotations


class FactkitError(Exception):
    """Base class for all toolkit errors."""


class ParseError(FactkitError):
    """Input could not be parsed at all (bad JSON, bad encoding)."""

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class SchemaError(FactkitError):
    """Input parsed but violates the documented schema; message names the field path."""


class TransportError(FactkitError):
    """A remote call failed: timeout, non-2xx status, or unparseable body."""
