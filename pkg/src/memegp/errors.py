"""Exception types shared across the package."""


class MemegpError(Exception):
    """Base class for all package-specific errors."""


class ImageTooSmallError(MemegpError):
    """An image operator received an image below its minimum size.

    Raised during program evaluation when stacked convolution/pooling nodes
    shrink the image past the operator's minimum; callers translate this
    into a worst-case fitness rather than aborting a run.
    """


class EmptyWindowError(MemegpError):
    """An aggregation window contains zero pixels after clamping."""


class ParseError(MemegpError):
    """Malformed program text. Carries the character offset of the problem."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class ConfigError(MemegpError):
    """An invalid run configuration."""


class DatasetError(MemegpError):
    """Base class for dataset loading/splitting problems."""


class FormatError(DatasetError):
    """A graymap file has a bad magic number, header, or payload."""


class EmptyClassError(DatasetError):
    """A dataset class directory is missing or holds no images."""


class TooFewItemsError(DatasetError):
    """A split would leave one class empty on either side."""
