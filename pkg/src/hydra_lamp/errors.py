"""Exception hierarchy; each family maps onto one CLI exit code."""


class HydraError(Exception):
    exit_code = 1


class ConfigError(HydraError):
    exit_code = 2


class DataError(HydraError):
    exit_code = 3


class ParseError(DataError):
    pass


class ValidationError(DataError):
    pass


class SizeError(DataError):
    pass


class BackendError(HydraError):
    exit_code = 4


class TransportError(BackendError):
    pass


class RoutingError(KeyError):
    """Prediction or training addressed a user without a head."""


class ConflictError(ValueError):
    """A head already exists for a user that should be new."""


class ModelFormatError(HydraError):
    exit_code = 3


class CorruptModelError(ModelFormatError):
    pass
