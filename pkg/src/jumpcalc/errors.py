"""Exception hierarchy shared by every jumpcalc module."""

from __future__ import annotations


class JumpCalcError(Exception):
    """Base class for all library errors."""


class ConfigurationError(JumpCalcError):
    """A measure, subset or configuration object is malformed."""


class DomainError(JumpCalcError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(JumpCalcError, ArithmeticError):
    """A computation produced a non-finite value."""


class DivergenceError(NumericError):
    """A trajectory left the region where the solver is trusted."""


class WindowError(JumpCalcError):
    """A transformation would move points across the simulation window."""


class ModelError(JumpCalcError):
    """A model violated one of its declared structural bounds."""


class DegenerateInputError(JumpCalcError, ValueError):
    """An estimator received input it cannot summarize (e.g. no samples)."""


class SchemaError(JumpCalcError):
    """An experiment configuration failed validation.

    ``violations`` holds one human-readable line per problem, so callers can
    report every issue at once instead of failing on the first.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnresolvedReferenceError(SchemaError):
    """A configuration names a catalog entry that is not registered."""


class SerializationError(JumpCalcError):
    """A report cannot be written in the requested format."""


class ReportWriteError(SerializationError, OSError):
    """A report path could not be written (an I/O failure, not a format problem)."""
