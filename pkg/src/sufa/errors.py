"""Error taxonomy shared across the library and the CLI.

The CLI maps these onto process exit codes: configuration problems
exit 1, bad input data exits 2, numeric failures exit 3.
"""


class SufaError(Exception):
    """Base class for all library-specific errors."""


class ConfigError(SufaError):
    """A run configuration is malformed or internally inconsistent."""


class InputError(SufaError):
    """Input data cannot be used (parse failures, degenerate columns)."""


class DimensionError(SufaError, ValueError):
    """Array shapes are inconsistent with the declared dimensions."""


class DomainError(SufaError, ValueError):
    """A numeric argument lies outside the domain of an operation."""


class NumericError(SufaError):
    """A numeric computation failed (overflow, non-finite results)."""


class IllConditionedError(NumericError):
    """A linear system is too ill-conditioned to solve reliably."""
