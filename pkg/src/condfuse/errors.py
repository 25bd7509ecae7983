"""Exception taxonomy shared by every module."""


class CondfuseError(ValueError):
    """Base class for all errors raised by this package."""


class DimensionError(CondfuseError):
    """Shapes or axes do not line up."""


class NumericError(CondfuseError):
    """A forward op produced NaN or Inf; never silent."""


class ParameterError(CondfuseError):
    """An argument is outside its allowed domain (e.g. even window)."""


class ContractError(CondfuseError):
    """An API precondition was violated (empty input, double backward, ...)."""


class ConfigError(CondfuseError):
    """Bad run configuration; carries the offending key when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
