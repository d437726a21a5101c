"""Exception types shared across driftlab modules."""


class DriftlabError(Exception):
    """Base class for all driftlab errors."""


class EllipticityViolation(DriftlabError):
    """Coefficient field leaves the admissible ellipticity band."""


class BadCoefficients(DriftlabError):
    """Malformed coefficient table for a periodic environment."""


class UnboundedF(DriftlabError):
    """Supplied vector field F exceeds its declared sup norm."""


class NonFinite(DriftlabError):
    """Integrator state became NaN or infinite (step too large)."""


class OffGrid(DriftlabError):
    """Requested time is not represented on the path grid."""


class HorizonExceeded(DriftlabError):
    """Path ended before a regeneration cycle could be certified."""


class BudgetExhausted(DriftlabError):
    """Step or wall-clock budget exceeded before enough cycles were collected."""


class TooFewCycles(DriftlabError):
    """Not enough regeneration cycles for a ratio estimate."""


class SolverDiverged(DriftlabError):
    """Linear solve for a torus PDE did not reach the target residual."""


class NotCentered(DriftlabError):
    """Functional has a nonzero torus mean where a centered one is required."""


class HorizonTooShort(DriftlabError):
    """Ergodic-average horizon is too short relative to 1/lambda^2."""


class ConfigError(DriftlabError):
    """Invalid or unknown experiment configuration."""
