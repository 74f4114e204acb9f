"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class DemrError(ValueError):
    """Base class for all domain errors raised by this package."""


class NonConvergence(DemrError):
    """An iterative scheme hit its iteration cap.

    ``result`` carries the last iterate (when one exists) and ``residual`` the
    final convergence measure.
    """

    def __init__(self, message, result=None, residual=None):
        super().__init__(message)
        self.result = result
        self.residual = residual


class NotSymmetric(DemrError):
    pass


class NotSkew(DemrError):
    pass


class DegenerateInput(DemrError):
    pass


class RankDeficient(DemrError):
    """Nearest rotation is not unique; ``result`` holds the representative."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class UnknownTag(DemrError):
    pass


class TagMismatch(DemrError):
    pass


class DispersedSamples(DemrError):
    pass


class BadFraction(DemrError):
    pass


class SpectralTie(DemrError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class LengthMismatch(DemrError):
    pass


class DimMismatch(DemrError):
    pass


class MartinUndefined(DemrError):
    pass


class ShapeMismatch(DemrError):
    pass


class NonFiniteLoss(DemrError):
    pass


class BadConfig(DemrError):
    pass


class IngestError(DemrError):
    pass
