"""Exception types raised across the package."""


class MixboundError(Exception):
    """Base class for all package errors."""


class DetailedBalanceViolation(MixboundError):
    pass


class NotIrreducible(MixboundError):
    pass


class NonPositivePi(MixboundError):
    pass


class EigensolverFailure(MixboundError):
    pass


class EmptyGrid(MixboundError):
    pass


class NotReachedWithinHorizon(MixboundError):
    pass


class ZeroDenominator(MixboundError):
    pass


class NotCentered(MixboundError):
    pass


class PathMissing(MixboundError):
    pass


class ZeroConductanceEdge(MixboundError):
    pass


class PartitionInvalid(MixboundError):
    pass


class NonPositiveInput(MixboundError):
    pass


class CapExceeded(MixboundError):
    pass


class InsufficientSeeds(MixboundError):
    pass


class InsufficientSeedsWarning(UserWarning):
    """Emitted when a disorder average is taken over too few seeds."""


class EmptyLowSetWarning(UserWarning):
    """No configuration lies below the energy cut; all weights are 1."""


class ConfigError(MixboundError):
    pass
