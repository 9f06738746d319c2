"""Exception hierarchy shared by all modules."""


class PolyPatternError(Exception):
    """Base class for every error raised by this package."""


class ConstantTermError(PolyPatternError, ValueError):
    pass


class ZeroPolynomialError(PolyPatternError, ValueError):
    pass


class DegenerateCurveError(PolyPatternError, ValueError):
    pass


class HypothesisError(PolyPatternError, ValueError):
    """A curve or configuration violates the hypothesis an operation relies on."""


class CalibrationFailed(PolyPatternError, RuntimeError):
    def __init__(self, message, violation=None):
        super().__init__(message)
        self.violation = violation


class ResolutionError(PolyPatternError, ValueError):
    pass


class NyquistError(PolyPatternError, ValueError):
    pass


class DimensionError(PolyPatternError, ValueError):
    pass


class ShellError(PolyPatternError, ValueError):
    pass


class QuadratureError(PolyPatternError, RuntimeError):
    pass


class SubstitutionError(PolyPatternError, ValueError):
    def __init__(self, message, critical_point=None):
        super().__init__(message)
        self.critical_point = critical_point


class ScheduleError(PolyPatternError, ValueError):
    pass


class BudgetExceeded(PolyPatternError, RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class NoWitnessFound(PolyPatternError, RuntimeError):
    def __init__(self, message, ledger=None):
        super().__init__(message)
        self.ledger = ledger


class NoSliceFound(PolyPatternError, RuntimeError):
    def __init__(self, message, max_measure=None):
        super().__init__(message)
        self.max_measure = max_measure


class RoundingError(PolyPatternError, ValueError):
    pass


class PreconditionError(PolyPatternError, ValueError):
    pass
