"""Exception types shared across the package."""


class AlphainvError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(AlphainvError, ValueError):
    """An argument is outside the documented domain of an operation."""


class CapabilityError(AlphainvError):
    """The requested transform does not exist for this configuration."""


class DensityOverflowError(AlphainvError, OverflowError):
    """exp() of the pre-activation would overflow float64.

    Raised by the direct ``exp`` density path; the log-space (Gumbel-CDF)
    alpha path never needs it.
    """


class BracketError(AlphainvError):
    """A root bracket does not contain a sign change."""

    def __init__(self, message, f_lo=None, f_hi=None):
        super().__init__(message)
        self.f_lo = f_lo
        self.f_hi = f_hi


class SceneValidationError(DomainError):
    """A scene document failed schema validation.

    ``path`` is a dotted/indexed location such as ``primitives[2].radius``.
    """

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason
