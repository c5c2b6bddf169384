"""
Exception hierarchy for the szloca toolkit.

Geometric misses (no-hit, behind-camera, out-of-bounds, at-infinity, no usable
anchor) are returned as ``None`` and never raised. Everything here is a real
failure that stops a run, and each family maps onto a CLI exit code.
"""

from __future__ import annotations

from typing import Optional

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_STREAM_ERROR = 3


class SzlocaError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = EXIT_CONFIG_ERROR

    def __init__(self, message: str, *, frame_index: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.frame_index = frame_index

    def __str__(self) -> str:
        if self.frame_index is not None:
            return f"frame {self.frame_index}: {self.message}"
        return self.message


class ConfigError(SzlocaError, ValueError):
    """Invalid configuration, including rigs that fail the tilt check."""


class InvalidAngleError(ConfigError):
    """Non-finite Euler angle."""


class DegenerateConfigurationError(ConfigError):
    """Geometry that admits no solution (camera on the plane, wrong projection kind)."""


class CalibrationError(SzlocaError):
    """Homography fit failed."""

    def __init__(self, message: str, *, condition: Optional[float] = None):
        super().__init__(message)
        self.condition = condition

    def __str__(self) -> str:
        base = super().__str__()
        if self.condition is not None:
            return f"{base} (condition estimate {self.condition:.3e})"
        return base


class StreamError(SzlocaError):
    """Problem with an input or output stream."""

    exit_code = EXIT_STREAM_ERROR


class RecordParseError(StreamError):
    """A record line could not be parsed."""

    def __init__(self, message: str, *, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class FrameOrderError(StreamError):
    """Frame indices or timestamps did not strictly increase."""


class SerializationError(StreamError):
    """A value could not be written (non-finite numbers)."""


class EncodeError(StreamError):
    """An OSC datagram could not be encoded."""
