"""Exception types shared across the toolkit.

Every failure mode that callers are expected to handle gets its own class so
the command line layer can map each one to a stable exit code.
"""


class ToolkitError(Exception):
    """Base class for all toolkit failures."""


class ConfigError(ToolkitError):
    """Run configuration is malformed (bad JSON, unknown key, bad value)."""


class ShapeMismatch(ToolkitError):
    """Field data does not match the grid it claims to live on."""


class EllipticityViolation(ToolkitError):
    """beta(x, t) beta(x, t)^T is not uniformly positive definite.

    Carries the offending sample point so the caller can report it.
    """

    def __init__(self, message, x=None, t=None, eigenvalue=None):
        super().__init__(message)
        self.x = x
        self.t = t
        self.eigenvalue = eigenvalue


class LinearSolveFailure(ToolkitError):
    """An inner linear solve exceeded its iteration budget or broke down."""


class CapExceeded(ToolkitError):
    """Dense operator assembly was requested above the configured size cap."""


class NoConvergence(ToolkitError):
    """An outer iteration (resolvent solve) exhausted its budget."""


class GammaZero(ToolkitError):
    """Requested decrement profile is identically zero."""


class GammaNegative(ToolkitError):
    """Requested decrement profile takes a negative value."""


class NegativityViolation(ToolkitError):
    """Computed seed density has negative values beyond the clamp tolerance."""


class ResidualTooLarge(ToolkitError):
    """End-to-end decrement residual exceeded the requested tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NotADensity(ToolkitError):
    """Sampling input is not a probability density on the grid."""


class VerificationFailed(ToolkitError):
    """Independent re-evolution contradicts a stored seed solution."""
