"""Exception hierarchy shared by every layer of the package.

The CLI maps these onto exit statuses: configuration problems are usage
errors (1), anything wrong with input data or files is a data error (2),
and non-finite values produced during computation are numerical errors (3).
"""


class MentalPerceiverError(Exception):
    """Base class for all package errors."""


class ConfigError(MentalPerceiverError, ValueError):
    """Invalid configuration: shapes, hyperparameters or config-file keys."""


class DataError(MentalPerceiverError, ValueError):
    """Malformed or insufficient input data."""


class CorpusError(DataError):
    """The corpus cannot support the requested operation."""


class CheckpointError(DataError):
    """A checkpoint or prior file could not be decoded."""


class NumericalError(MentalPerceiverError, ArithmeticError):
    """A computation produced NaN or Inf.

    ``op`` names the operation (or parameter) where the first non-finite
    value was observed.
    """

    def __init__(self, message, op=None):
        super().__init__(message)
        self.op = op
