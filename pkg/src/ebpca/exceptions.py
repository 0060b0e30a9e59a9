"""Exception hierarchy for the ebpca package."""


class EBPCAError(Exception):
    """Base class for all ebpca errors."""


class ValidationError(EBPCAError, ValueError):
    """Invalid user-supplied parameters (prior specs, configs, weights)."""


class DimensionError(EBPCAError, ValueError):
    """Incompatible or out-of-range matrix dimensions."""


class DegenerateNoiseError(EBPCAError):
    """Residual variance is zero: the input is exactly low-rank."""


class SubCriticalError(EBPCAError):
    """Signal strength at or below the detection threshold gamma^{-1/4}."""


class AmbiguousRankError(EBPCAError):
    """Tied singular values prevent a well-defined top-k decomposition."""


class RankError(EBPCAError, ValueError):
    """Rank-deficient input where full column rank is required."""


class ChannelError(EBPCAError):
    """Channel matrix M is numerically singular."""


class NothingToDenoiseError(EBPCAError):
    """No super-critical components remain after the drop rule."""


class UnsupportedMethodError(EBPCAError, ValueError):
    """Requested evaluation method is not available for this input."""
