"""Exception types shared across the package."""


class SpaerError(Exception):
    """Base class for all package-specific errors."""


class GridMismatch(SpaerError):
    """Two volumes or fields do not share dims/spacing/origin."""


class InvalidChannelSpec(SpaerError):
    """A filter-bank channel has an invalid sigma or power."""


class DegenerateGeometry(SpaerError):
    """Point clouds too degenerate for a rigid fit (collinear or <3 pairs)."""


class NonFiniteInput(SpaerError):
    """NaN or Inf encountered where finite values are required."""


class ShapeMismatch(SpaerError):
    """Token/parameter shapes are inconsistent."""


class NonFiniteGradient(SpaerError):
    """A gradient evaluation produced NaN or Inf."""


class DivergenceDetected(SpaerError):
    """Training loss became non-finite."""


class EmptyDataset(SpaerError):
    """Training requested on an empty dataset."""


class NonFiniteEnergy(SpaerError):
    """Registration energy became non-finite."""


class LengthMismatch(SpaerError):
    """Sequence lengths do not agree."""
