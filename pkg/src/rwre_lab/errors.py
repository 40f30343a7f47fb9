class RWRELabError(Exception):
    """Base class for all package errors."""


class CapacityError(RWRELabError):
    """A requested window, table or experiment exceeds the configured memory cap."""


class WindowUnderrunError(RWRELabError):
    """A walk reached a site where the environment is not defined."""


class CensoringError(RWRELabError):
    """Too many trials exhausted their step budget for an estimate to be reported."""


class QuantizationError(RWRELabError):
    pass


class MissingStatusError(RWRELabError):
    pass


class ConfigError(RWRELabError):
    pass
