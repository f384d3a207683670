"""Exception types raised by the library."""


class HybridBandError(Exception):
    """Base class for library errors."""


class DimensionError(HybridBandError, ValueError):
    pass


class NotHermitianError(HybridBandError, ValueError):
    pass


class ConvergenceError(HybridBandError, RuntimeError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ReflectionError(HybridBandError, FloatingPointError):
    """Non-finite value produced while building a Householder reflector."""

    def __init__(self, message, stage):
        super().__init__(message)
        self.stage = stage


class InfeasibleError(HybridBandError, ValueError):
    pass


class ConfigError(HybridBandError, ValueError):
    pass
