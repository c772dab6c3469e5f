"""Exception types raised by the estimation and data-handling routines."""


class IdmsmError(Exception):
    """Base class for all errors raised by this package."""


class CohortError(IdmsmError):
    """Invalid subject-level input data."""


class NonPositiveTime(CohortError):
    pass


class InconsistentIndicators(CohortError):
    pass


class NonFiniteValue(CohortError):
    pass


class UnknownTransition(IdmsmError):
    pass


class FitError(IdmsmError):
    """An estimation routine could not produce a valid fit."""


class NoVariation(FitError):
    pass


class RankDeficient(FitError):
    pass


class Separation(FitError):
    pass


class NotConverged(FitError):
    pass


class NoEvents(FitError):
    pass


class MonotoneLikelihood(FitError):
    pass


class EmptyRiskSet(FitError):
    pass


class SingularInformation(FitError):
    pass


class ZeroVariance(FitError):
    pass


class QuadratureFailure(FitError):
    pass


class GridBeforeT1(IdmsmError):
    pass


class NegativeInput(IdmsmError):
    pass


class BootstrapFailure(IdmsmError):
    """Too many bootstrap replicates failed to fit."""
