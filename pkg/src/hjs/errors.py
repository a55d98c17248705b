"""Exception types shared across the toolkit."""


class HJSError(Exception):
    """Base class for numerical failures raised by this package."""


class DualSolveError(HJSError):
    """Newton solve of the velocity/momentum duality did not converge."""


class ActionSolveError(HJSError):
    """Boundary-value action minimization failed.

    Carries the last iterate (if any) so callers can inspect what the
    solver was looking at when it gave up.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class DerivativeCheckError(HJSError):
    """Analytic derivatives disagree with their finite-difference check."""


class ExtremizerError(HJSError):
    """Inner sup/inf search failed (restart disagreement or boundary hit)."""


class ConvergenceError(HJSError):
    """An extrapolated limit did not behave like a Cauchy sequence."""


class CriticalPointError(HJSError):
    """Mountain-pass search failed to certify a critical point."""
