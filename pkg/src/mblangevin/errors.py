"""Exception types shared across the package."""


class MblError(Exception):
    """Base class for all package-specific errors."""


class NotPSD(MblError):
    """A matrix that must be positive semi-definite has a genuinely negative eigenvalue."""


class DimensionMismatch(MblError):
    """Operands have incompatible dimensions."""


class DegenerateData(MblError):
    """A dataset is too small or too degenerate for the requested statistic."""


class InvalidBatch(MblError):
    """A mini-batch scheme is inconsistent with the dataset size."""


class IndexOutOfRange(MblError):
    """A data index falls outside {0, ..., N-1}."""


class TooLargeToEnumerate(MblError):
    """Exhaustive batch enumeration was requested for a problem that is too large."""


class SingularCovariance(MblError):
    """The gradient-estimator covariance is numerically singular."""


class FullBatch(MblError):
    """An operation that needs mini-batch noise was called with a full batch (eps = 0)."""


class OverlappingBoxes(MblError):
    """Boxes meant to form a partition overlap on an open set."""


class DegenerateBox(MblError):
    """A box has an upper bound not strictly above its lower bound."""


class GridMismatch(MblError):
    """Two gridded quantities do not share the same grid."""


class UnderResolved(MblError):
    """A quadrature grid fails to capture enough probability mass."""


class SingularGram(MblError):
    """The basis Gram matrix is numerically singular."""


class Divergence(MblError):
    """A chain left the stable region (non-finite or huge state)."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"chain diverged at step {step}")


class ShapeMismatch(MblError):
    """Friction coefficients disagree in shape (scalar / diagonal / full)."""


class ConfigError(MblError):
    """An experiment configuration failed validation."""
