"""Exception types shared across the package.

Every error raised on purpose derives from RelkdError, so callers (and the
CLI) can distinguish misuse from genuine bugs. Most types also inherit the
closest builtin so generic except clauses keep working.
"""


class RelkdError(Exception):
    """Base class for all errors raised by relkd."""


class DimensionError(RelkdError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(RelkdError, ValueError):
    """Input is outside the mathematical domain of the operation."""


class ConfigError(RelkdError, ValueError):
    """A configuration value or argument combination is invalid."""


class SamplingError(RelkdError, ValueError):
    """A batch cannot supply the tuples a sampler needs."""


class TapeStateError(RelkdError, RuntimeError):
    """A tape was used in an invalid order (e.g. backward twice)."""


class FormatError(RelkdError, ValueError):
    """A serialized file is malformed or inconsistent."""


class TrainingError(RelkdError, RuntimeError):
    """Training had to abort (e.g. a loss term went non-finite)."""
