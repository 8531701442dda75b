"""Exception hierarchy shared by every module."""


class GWHError(Exception):
    """Base class for all package errors."""


class DistributionError(GWHError, ValueError):
    pass


class ZeroOffspring(DistributionError):
    pass


class Subcritical(DistributionError):
    pass


class Degenerate(DistributionError):
    pass


class NotNormalized(DistributionError):
    pass


class ResourceLimit(GWHError, RuntimeError):
    """A tree outgrew its configured node cap."""


class DepthUnavailable(GWHError, ValueError):
    pass


class MaxDepth(GWHError, RuntimeError):
    """Refinement gave up before reaching the requested width.

    The best interval found so far is kept on ``interval``.
    """

    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


class BetaOne(GWHError, ZeroDivisionError):
    pass


class BadInit(GWHError, ValueError):
    pass


class RayExhausted(GWHError, IndexError):
    pass


class StepLimit(GWHError, RuntimeError):
    pass


class DomainError(GWHError, ValueError):
    pass


class ConfigError(GWHError, ValueError):
    pass
