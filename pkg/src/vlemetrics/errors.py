"""Exception hierarchy.

Three category roots map onto the CLI exit codes: ConfigError (2),
DataError (3), NumericError (4). Specific failures subclass whichever
category a pipeline run should report them under.
"""


class VleMetricsError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(VleMetricsError):
    """Invalid configuration: bad keys, bad values, bad patterns."""

    exit_code = 2


class DataError(VleMetricsError):
    """Input data violates a contract (missing columns, bad rows, ...)."""

    exit_code = 3


class NumericError(VleMetricsError):
    """A numeric procedure cannot produce a valid result."""

    exit_code = 4


# --- ingest ---------------------------------------------------------------

class MissingColumn(DataError):
    def __init__(self, column: str):
        super().__init__(f"required column {column!r} not found in header")
        self.column = column


class BadTimestamp(DataError):
    def __init__(self, row: int, value: str):
        super().__init__(f"row {row}: unparseable timestamp {value!r}")
        self.row = row
        self.value = value


class EmptyFile(DataError):
    pass


class InvalidPattern(ConfigError):
    def __init__(self, pattern: str, reason: str):
        super().__init__(f"classifier pattern {pattern!r} does not compile: {reason}")
        self.pattern = pattern


# --- sessionizer ----------------------------------------------------------

class NoGaps(DataError):
    """No qualifying consecutive-log gap found under the cap."""


class UnsortedInput(DataError):
    pass


class MixedKeys(DataError):
    """Sessions passed to an aggregate do not share user/chapter."""


# --- engagement metric ----------------------------------------------------

class NoAccess(DataError):
    def __init__(self, chapter: int):
        super().__init__(f"no student ever accessed chapter {chapter}")
        self.chapter = chapter


class NotFitted(NumericError):
    """Apply called before fit."""


class WeightMismatch(ConfigError):
    pass


class NonPositiveAfterShift(NumericError):
    pass


# --- features ------------------------------------------------------------

class AllColumnsDropped(DataError):
    pass


# --- models ---------------------------------------------------------------

class RankDeficient(NumericError):
    pass


class SchemaMismatch(DataError):
    """Prediction matrix columns differ from the training schema."""


class BackfitDivergence(NumericError):
    pass


# --- evaluation -----------------------------------------------------------

class TooFewRows(DataError):
    pass


class ZeroVarianceTarget(NumericError):
    """R-squared undefined; the RMSE is still attached to the exception."""

    def __init__(self, rmse: float):
        super().__init__("target has zero variance; R^2 undefined")
        self.rmse = rmse


# --- cli / artifacts -------------------------------------------------------

class MissingArtifact(DataError):
    def __init__(self, path):
        super().__init__(f"required artifact does not exist: {path}")
        self.path = path


class ArtifactMismatch(DataError):
    """Artifacts carry different config hashes and cannot be combined."""
