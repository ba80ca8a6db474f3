"""Exception types shared across the package."""


class LogibranchError(Exception):
    """Base class for package-specific failures."""


class ConfigError(LogibranchError):
    """Invalid or unknown experiment configuration."""


class NumericalFailure(LogibranchError):
    """A numerical routine could not produce a trustworthy result.

    Carries a ``diagnostics`` dict describing what went wrong.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class KTooSmall(NumericalFailure):
    """State cap K leaves more tail mass than the requested bound."""


class BracketFailure(NumericalFailure):
    """Root bracketing for a scalar solve found no sign change."""


class UnsupportedRegime(LogibranchError):
    """Parameters outside the regime a method is valid for."""


class ImpracticalRate(LogibranchError):
    """Rejection sampling acceptance rate too low to be practical."""

    def __init__(self, message, acceptance_rate):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate
