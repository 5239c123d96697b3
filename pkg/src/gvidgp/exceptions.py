"""Exception hierarchy shared across the package."""


class GvidgpError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(GvidgpError):
    """Array shapes do not conform."""


class NotPositiveDefinite(GvidgpError):
    """Cholesky factorization failed after all jitter escalations.

    Usually signals a broken covariance matrix produced upstream.
    """


class AlphaOutOfRange(GvidgpError):
    """Renyi order must lie in the open interval (0, 1)."""


class NonPositivePower(GvidgpError):
    """Density power c must be strictly positive."""


class NonFiniteGradient(GvidgpError):
    """A gradient block contains NaN or Inf."""


class NonFiniteObjective(GvidgpError):
    """The training objective evaluated to NaN or Inf."""

    def __init__(self, message, iteration=None, batch_indices=None):
        super().__init__(message)
        self.iteration = iteration
        self.batch_indices = batch_indices


class ParseError(GvidgpError):
    """A CSV cell could not be parsed as a number."""

    def __init__(self, row, column, content):
        super().__init__(f"cannot parse cell at row {row}, column {column}: {content!r}")
        self.row = row
        self.column = column
        self.content = content


class EmptyFile(GvidgpError):
    """The input file contains no data rows."""


class TooFewRows(GvidgpError):
    """Not enough rows to build a train/test split."""


class ConfigError(GvidgpError):
    """A run configuration failed validation."""

    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field
