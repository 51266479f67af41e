"""Exception hierarchy.

The CLI maps these onto exit codes: data problems exit 3, numeric or
fitting problems exit 4, bad configuration exits 2.
"""


class UpliftError(Exception):
    """Base class for every error raised by upliftkit."""


class ConfigError(UpliftError, ValueError):
    """Invalid parameter combination or option value."""


class DataError(UpliftError, ValueError):
    """Input data could not be turned into a valid ExperimentFrame."""


class SchemaError(DataError):
    """A column named by the schema is missing from the input."""


class ParseError(DataError):
    """A cell could not be parsed as a number."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class InvariantError(DataError):
    """A frame invariant (lengths, finiteness, arm layout...) is violated."""


class SplitError(DataError):
    """Stratified split impossible for the given arm sizes."""


class FitError(UpliftError, RuntimeError):
    """A model could not be fitted on the supplied data."""


class EstimationError(FitError):
    """An estimator was asked for a quantity it cannot compute."""


class PropensityError(EstimationError):
    """Propensity model cannot be fitted (degenerate treatment arm)."""


class UnsupportedOutcomeError(DataError):
    """The estimator does not support the frame's outcome kind."""


class ModelFormatError(DataError):
    """A serialized model file is malformed or has an unknown version."""
