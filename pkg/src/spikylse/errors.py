"""Exception types raised across the package."""


class SpikyLSEError(Exception):
    pass


class InfeasibleSeparationError(SpikyLSEError, ValueError):
    """Rejection sampling could not place the sources at the requested separation."""


class UnsupportedBandwidthError(SpikyLSEError, ValueError):
    pass


class ConstructionFailedError(SpikyLSEError, RuntimeError):
    """The interpolation system is singular or too ill-conditioned to solve."""


class DegenerateFitError(SpikyLSEError, ValueError):
    pass


class ConfigError(SpikyLSEError, ValueError):
    pass
