"""Exception types raised across the package."""


class GNEError(Exception):
    """Base class for all package errors."""


class NotSymmetric(GNEError, ValueError):
    pass


class NegativeWeight(GNEError, ValueError):
    pass


class Disconnected(GNEError, ValueError):
    pass


class DimensionMismatch(GNEError, ValueError):
    pass


class NegativeMultiplier(GNEError, ValueError):
    pass


class NotStronglyMonotone(GNEError, ValueError):
    pass


class MissingConstants(GNEError, ValueError):
    pass


class NonpositiveInput(GNEError, ValueError):
    pass


class StepPlanIncomplete(GNEError, ValueError):
    pass


class GammaOutOfRange(GNEError, ValueError):
    pass


class BadBounds(GNEError, ValueError):
    pass


class Infeasible(GNEError, ValueError):
    pass


class NonfiniteIterate(GNEError, ArithmeticError):
    pass


class OracleFailure(GNEError, RuntimeError):
    pass


class ScheduleOutOfRange(GNEError, ValueError):
    pass


class TooShort(GNEError, ValueError):
    pass


class InnerSolveFailure(GNEError, RuntimeError):
    pass


class MissingEdgeVariable(GNEError, ValueError):
    pass


class CouplingPresent(GNEError, ValueError):
    pass


class AlphaTooLarge(GNEError, ValueError):
    pass


class ToleranceNotReached(GNEError, RuntimeError):
    pass


class DegenerateDraw(GNEError, RuntimeError):
    pass
