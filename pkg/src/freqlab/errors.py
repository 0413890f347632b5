"""Exception hierarchy shared by every module."""


class FreqLabError(Exception):
    """Base class for all library errors."""


class ConfigError(FreqLabError):
    pass


class DomainError(FreqLabError):
    """Geometric precondition violated (point outside the bounding box, etc.)."""


class NonSmoothPoint(DomainError):
    """The graph is not differentiable at the requested point."""


class MaxRefinementExceeded(FreqLabError):
    pass


class WindowTouchesBoundary(FreqLabError):
    pass


class NoRootFound(FreqLabError):
    pass


class DepthExceeded(FreqLabError):
    pass


class UnknownName(FreqLabError):
    pass


class FitDiverged(FreqLabError):
    pass


class IllConditioned(FreqLabError):
    pass


class NoConvergence(FreqLabError):
    pass


class CrossCheckFailed(FreqLabError):
    pass


class ZeroAverage(FreqLabError):
    """h(x, r) vanishes, so the frequency is undefined."""


class NotAdmissible(FreqLabError):
    pass


class PreconditionFailed(FreqLabError):
    pass


class NotHarmonicRegion(FreqLabError):
    pass


class ZeroDenominator(FreqLabError):
    pass


class DegenerateFamily(FreqLabError):
    pass
