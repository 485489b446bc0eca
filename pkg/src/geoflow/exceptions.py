"""Exception hierarchy shared by every geoflow module."""


class GeoflowError(Exception):
    """Base class for all geoflow errors."""


class InvalidGridError(GeoflowError, ValueError):
    pass


class ShapeMismatchError(GeoflowError, ValueError):
    pass


class ComponentCountError(GeoflowError, ValueError):
    pass


class WaveBasisError(GeoflowError, RuntimeError):
    """Eigen-decomposition failed or produced unexpected frequencies.

    The offending wavevector is stored in ``xi``.
    """

    def __init__(self, message, xi=None):
        super().__init__(message)
        self.xi = xi


class NotQuasiGeostrophicError(GeoflowError, ValueError):
    pass


class MissingForcingError(GeoflowError, ValueError):
    pass


class TimestampMismatchError(GeoflowError, ValueError):
    pass


class UnsupportedConfigurationError(GeoflowError, ValueError):
    pass


class GridTooSmallError(GeoflowError, ValueError):
    def __init__(self, message, required_n=None):
        super().__init__(message)
        self.required_n = required_n


class DivergenceError(GeoflowError, FloatingPointError):
    """A time integration produced non-finite values.

    Attributes:
        last_valid_time: time of the last state that was entirely finite.
        record: partial RunRecord, attached by ``integrate``.
    """

    def __init__(self, message, last_valid_time, record=None):
        super().__init__(message)
        self.last_valid_time = last_valid_time
        self.record = record


class ConfigError(GeoflowError, ValueError):
    pass
