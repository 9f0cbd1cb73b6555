"""Exception types shared across the package."""


class SNNError(Exception):
    pass


class DimensionError(SNNError, ValueError):
    pass


class ConfigError(SNNError, ValueError):
    pass


class StateError(SNNError, RuntimeError):
    pass


class InputError(SNNError, ValueError):
    pass


class DegenerateScaleError(SNNError, ValueError):
    def __init__(self, message, unit=None, layer=None):
        super().__init__(message)
        self.unit = unit
        self.layer = layer


class UnsupportedGranularityError(SNNError, ValueError):
    pass


class NonFiniteError(SNNError, FloatingPointError):
    pass


class ParseError(SNNError, ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class LoadError(SNNError, ValueError):
    pass
