"""
Error taxonomy shared by the library modules and the command line.

Argument errors stay plain ``ValueError``; the classes below mark the cases
the command line maps to their own exit codes.
"""


class DataError(ValueError):
    """Malformed or missing input data (files, records, headers)."""


class StateError(RuntimeError):
    """Operation invoked without the state it depends on."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class TrainingError(NumericError):
    """A training step produced a non-finite loss."""

    def __init__(self, message: str, diagnostics: dict = None):
        self.diagnostics = diagnostics or {}
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
            message = f"{message} ({details})"
        super().__init__(message)


class ConfigError(ValueError):
    """Unknown configuration key or unparsable configuration value."""
