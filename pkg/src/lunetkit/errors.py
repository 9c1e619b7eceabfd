"""Exception types shared across the package.

Every failure mode raised by lunetkit derives from :class:`LunetError`,
so callers (and the CLI) can distinguish validation problems from numeric
divergence and from genuine bugs.
"""


class LunetError(Exception):
    """Base class for all lunetkit errors."""


# --- geometry / masks ---------------------------------------------------


class EmptyStructure(LunetError):
    """Requested structure has no pixels in the mask."""


class GridMismatch(LunetError):
    """Two masks/images do not share the same grid."""


class EmptyContour(LunetError):
    """A contour with no points was passed to a distance metric."""


class BoxOutOfBounds(LunetError):
    """A pixel-space box does not fit inside the target image."""


# --- tensors ------------------------------------------------------------


class ShapeMismatch(LunetError):
    """Operand shapes are incompatible for the requested operation."""


class OddSpatialDim(LunetError):
    """Pooling requires even spatial dimensions."""


class NotScalarLoss(LunetError):
    """backward() needs a scalar loss tensor."""


class OutputTooSmall(LunetError):
    """crop_resize output must be at least 2x2."""


# --- metrics / clinical -------------------------------------------------


class IncompleteScores(LunetError):
    """Outlier classification needs the full 2-view x 2-instant score set."""


class LengthMismatch(LunetError):
    """Paired series have different lengths."""


class DegenerateSeries(LunetError):
    """Series statistics are undefined (too short or constant reference)."""


class NonPositiveEDV(LunetError):
    """Ejection fraction needs a strictly positive ED volume."""


class DegenerateRegion(LunetError):
    """Region is too small for axis extraction (< 3 pixels)."""


# --- configuration / data -----------------------------------------------


class InvalidConfig(LunetError):
    """Network or training configuration violates its invariants."""


class InvalidParams(LunetError):
    """Phantom generator parameters violate their invariants."""


class InvalidK(LunetError):
    """Fold count is not usable for the given record count."""


class EmptyDataset(LunetError):
    """Training or evaluation set contains no records."""


class DivergedLoss(LunetError):
    """Training loss became non-finite; carries a state dump."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


class IoFailure(LunetError):
    """Report or dataset files could not be written/read."""
