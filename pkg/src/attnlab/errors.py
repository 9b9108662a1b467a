"""Exception hierarchy. Every domain failure derives from ``AttnLabError``."""


class AttnLabError(ValueError):
    pass


class NonSquare(AttnLabError):
    pass


class NumericalFailure(AttnLabError):
    pass


class DimensionMismatch(AttnLabError):
    pass


class ModeMismatch(AttnLabError):
    pass


class NonFiniteState(AttnLabError):
    """Raised when an integration produces NaN/Inf.

    ``trajectory`` holds every finite snapshot recorded up to the failure and
    ``blowup_time`` the time of the first non-finite state.
    """

    def __init__(self, message, trajectory=None, blowup_time=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.blowup_time = blowup_time


class SizeMismatch(AttnLabError):
    pass


class TooLarge(AttnLabError):
    pass


class EmptyCenters(AttnLabError):
    pass


class NoDualBasis(AttnLabError):
    pass


class ZeroVector(AttnLabError):
    pass


class FullRank(AttnLabError):
    pass


class PredicateUnsatisfiable(AttnLabError):
    pass


class NonPositiveEigenvalue(AttnLabError):
    pass


class InvalidLog(AttnLabError):
    pass
