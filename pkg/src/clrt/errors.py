"""Exception hierarchy shared by every module of the package."""


class ClrtError(Exception):
    """Base class for all errors raised by this package."""


# interval kernel
class InvalidInterval(ClrtError, ValueError):
    """Raised when an interval is built with lo > hi or NaN endpoints."""


class DivisionByZeroInterval(ClrtError, ZeroDivisionError):
    """Raised when dividing by an interval that contains zero."""


class DomainError(ClrtError, ValueError):
    """Raised when sqrt/log is applied to an interval leaving its domain."""


class DimensionMismatch(ClrtError, ValueError):
    pass


# linear algebra
class NonFiniteEntry(ClrtError, ValueError):
    pass


class NotPositiveDefinite(ClrtError, ValueError):
    pass


class RankDeficient(ClrtError, ValueError):
    pass


class NearDefective(ClrtError, ValueError):
    """Eigenvector matrix too ill-conditioned to define a metric."""


# systems
class UnknownSystem(ClrtError, KeyError):
    pass


class BadParameter(ClrtError, ValueError):
    pass


# integrator
class NoAprioriEnclosure(ClrtError):
    """Picard iteration failed to find an a-priori enclosure; halve the step."""


class IntervalBlowup(ClrtError):
    pass


# reachtube
class StepUnderflow(ClrtError):
    pass


class BloatDiverged(ClrtError):
    """The continuous-segment radius exceeded its cap; halve the step."""


class BudgetExhausted(ClrtError):
    """Branch-and-prune hit its box or depth budget without a verdict."""


class ConfigError(ClrtError, ValueError):
    pass


# command line
class BadDimensionPair(ClrtError, ValueError):
    """Projection indices are out of range or equal."""
