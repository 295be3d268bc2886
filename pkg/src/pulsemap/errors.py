"""Exception hierarchy shared by every stage."""


class PulsemapError(Exception):
    """Base class for all package errors."""


class ParameterError(PulsemapError, ValueError):
    """An argument or configuration value is outside its legal range."""


class FrameFormatError(PulsemapError):
    """A frame file or sidecar header is malformed, missing or truncated."""


class DimensionMismatchError(PulsemapError, ValueError):
    """A frame does not match the dimensions of its stream or filter state."""


class NumericError(PulsemapError, ArithmeticError):
    """A non-finite value appeared in a frame or in filter state.

    Attributes
    ----------
    frame_index : int or None
        Index of the frame where the value was detected.
    pixel : tuple of int or None
        ``(x, y)`` coordinates of the first offending pixel.
    """

    def __init__(self, message, frame_index=None, pixel=None):
        super().__init__(message)
        self.frame_index = frame_index
        self.pixel = pixel
