"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""


class ValidationError(ValueError):
    """Structurally valid input that violates a semantic invariant."""


class TraceParseError(ValueError):
    """A trace or span file could not be parsed.

    Carries the 1-based line number of the offending record.
    """

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ProtocolError(RuntimeError):
    """The engine and a policy disagreed about event ordering or state."""


class SimulationError(RuntimeError):
    """The simulation reached a state it cannot make progress from."""
