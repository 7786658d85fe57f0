"""Exception hierarchy shared by all ldtlab modules."""


class LDTLabError(Exception):
    """Base class for every error raised by the package."""


class NonStochastic(LDTLabError, ValueError):
    pass


class NoConvergence(LDTLabError, RuntimeError):
    pass


class SingularityHit(LDTLabError, RuntimeError):
    pass


class UnsupportedKernel(LDTLabError, TypeError):
    pass


class DimensionMismatch(LDTLabError, ValueError):
    pass


class NotCentered(LDTLabError, ValueError):
    pass


class NoDecay(LDTLabError, RuntimeError):
    pass


class EmptyTestSet(LDTLabError, ValueError):
    pass


class NonPositiveParameter(LDTLabError, ValueError):
    pass


class InvalidExponent(LDTLabError, ValueError):
    pass


class EpsOutOfRange(LDTLabError, ValueError):
    pass


class BoundaryTooClose(LDTLabError, ValueError):
    pass


class InsufficientTail(LDTLabError, ValueError):
    pass


class UnsolvedPoisson(LDTLabError, ValueError):
    pass


class LatticeOverflow(LDTLabError, ValueError):
    pass


class NonLattice(LDTLabError, ValueError):
    pass


class GridMismatch(LDTLabError, ValueError):
    pass
