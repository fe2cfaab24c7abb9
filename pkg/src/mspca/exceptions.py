"""Exception hierarchy for the package."""


class MspcaError(Exception):
    """Base class for all package errors."""


class InvalidArgument(MspcaError, ValueError):
    pass


class InvalidMatrix(MspcaError, ValueError):
    pass


class DimensionError(MspcaError, ValueError):
    pass


class InsufficientData(MspcaError, ValueError):
    pass


class DegenerateStart(MspcaError, ArithmeticError):
    """A starting value collapsed to zero after projection."""


class DegenerateProjection(MspcaError, ArithmeticError):
    """A source block lies in the span of the prior loadings."""


class DegenerateScaling(MspcaError, ArithmeticError):
    """The two extreme solutions explain the same variance."""


class DegenerateSubspace(MspcaError, ArithmeticError):
    pass


class RhoEscalationNeeded(MspcaError, ArithmeticError):
    """No feasible root for the loadings subproblem at the current rho."""


class NonConvergence(MspcaError, ArithmeticError):
    pass
