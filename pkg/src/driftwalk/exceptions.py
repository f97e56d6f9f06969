"""Exception hierarchy shared by all modules."""


class DriftwalkError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(DriftwalkError):
    """An environment violates one of the standing assumptions.

    The failing :class:`~driftwalk.lattice.ValidationReport` is attached as
    ``report`` when available.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class OutOfRange(ValidationError):
    pass


class AmplitudeTooLarge(DriftwalkError):
    pass


class UnbalancedTorus(DriftwalkError):
    pass


class NotLipschitz(DriftwalkError):
    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


class NotMeanZero(DriftwalkError):
    pass


class DimsMismatch(DriftwalkError):
    pass


class ParseError(DriftwalkError):
    pass


class Reducible(DriftwalkError):
    def __init__(self, message, labels=None):
        super().__init__(message)
        self.labels = labels


class SolverDivergence(DriftwalkError):
    pass


class RecordModeMismatch(DriftwalkError):
    pass


class InsufficientSamples(DriftwalkError):
    pass


class HorizonTooLong(DriftwalkError):
    pass


class SchemaMismatch(DriftwalkError):
    pass


class ConfigError(DriftwalkError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NetDriftWarning(UserWarning):
    """The drift field carries a nonzero spatial mean (periodization bias)."""


class ReducibilityWarning(UserWarning):
    pass
