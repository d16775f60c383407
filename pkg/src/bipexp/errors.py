"""Exception taxonomy shared across the package.

Three branches map onto the CLI exit codes: configuration problems (2),
data problems (3), and numerical failures (4). Library code raises plain
ValueError / IndexError for programming errors such as mismatched shapes.
"""

from __future__ import annotations


class BipexpError(Exception):
    """Base class for package-specific errors."""


class ConfigError(BipexpError):
    """Invalid run configuration: schema violations, unknown keys, bad values."""


class DataError(BipexpError):
    """Invalid or insufficient data for the requested computation."""


class ParseError(DataError):
    """A file could not be parsed. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(DataError):
    """Parsed data violates a structural invariant (negative weight, duplicate edge, ...)."""


class MissingCellError(DataError):
    """An estimate needs cells of a fitted surface that hold no observations."""

    def __init__(self, message: str, holes: list[tuple[float, float]]):
        super().__init__(message)
        self.holes = holes


class NumericalError(BipexpError):
    """A numerical routine failed (rank deficiency, singular kernel system, ...)."""


class RankDeficiencyError(NumericalError):
    """A design matrix is numerically rank deficient. Names the offending columns."""

    def __init__(self, message: str, columns: tuple[str, ...]):
        super().__init__(message)
        self.columns = columns
