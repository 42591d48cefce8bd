"""Exception hierarchy shared by every module."""


class CookieError(Exception):
    """Base class for all errors raised by this package."""


class InputError(CookieError, ValueError):
    """Invalid argument value (empty input, out-of-range parameter)."""


class DimensionError(InputError):
    """Array shapes do not line up."""


class NumericError(CookieError, ArithmeticError):
    """A non-finite value or a failed factorization."""


class EstimatorError(InputError):
    """An estimator was called on a batch it cannot handle."""


class UnsupportedError(CookieError):
    """The requested quantity has no exact oracle."""


class ConfigError(InputError):
    """Malformed configuration. ``field`` is the dotted path of the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class StratificationError(InputError):
    """A training fold lacks one of the classes."""


class TrainingAbort(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, objective: str, term: str, value: float):
        super().__init__(
            f"non-finite loss at epoch {epoch}, objective {objective}, term {term}: {value}"
        )
        self.epoch = epoch
        self.objective = objective
        self.term = term
