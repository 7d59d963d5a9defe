"""Exception types shared across the package."""


class SegQAError(Exception):
    """Base class for all package errors."""


class EmptyMask(SegQAError):
    """Mask has no foreground voxels."""


class FullMask(SegQAError):
    """Mask has no background voxels."""


class NoSurface(SegQAError):
    """Scalar field has no crossing of the requested isolevel."""


class EmptyMesh(SegQAError):
    """Operation needs at least one vertex and one face."""


class GateUnsatisfiable(SegQAError):
    """Perturbation could not be brought into the Hausdorff gate."""

    def __init__(self, message, closest_hd=None):
        super().__init__(message)
        self.closest_hd = closest_hd


class ShapeOutOfBounds(SegQAError):
    """Phantom shape does not fit inside the grid with the required margin."""


class ShapeMismatch(SegQAError):
    """Array or parameter shapes are incompatible."""

    def __init__(self, message, names=()):
        super().__init__(message)
        self.names = list(names)


class InsufficientSamples(SegQAError):
    """Requested split counts exceed the available samples."""


class FormatError(SegQAError):
    """A file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(SegQAError):
    """Malformed configuration document."""

    def __init__(self, message, key_path=""):
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)
        self.key_path = key_path
