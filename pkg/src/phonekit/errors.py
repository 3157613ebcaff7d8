"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, data errors exit 2,
numerical failures exit 3.
"""


class PhonekitError(Exception):
    """Base class for all package-specific errors."""


class ParseError(PhonekitError):
    """A file failed to parse. Carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)


class DuplicateKeyError(ParseError):
    """Two rows define the same phone."""


class FeatureValueError(ParseError):
    """A feature cell holds something other than '+', '-' or '0'."""


class DataError(PhonekitError):
    """Inputs are structurally valid but semantically unusable."""


class TableMismatchError(DataError):
    """Two phones or sequences were resolved against different feature tables."""


class UndefinedMetricError(DataError):
    """A metric has no defined value (empty reference, constant rank list)."""


class ConfigError(PhonekitError):
    """An objective or run configuration violates its invariants."""


class NumericalError(PhonekitError):
    """A numerical failure (NaN/Inf gradient, diverged training run)."""
