"""Exception types shared across the package."""


class ThermocrackError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(ThermocrackError, ValueError):
    """Operands have incompatible or invalid shapes."""


class DomainError(ThermocrackError, ValueError):
    """A scalar argument is outside its valid range."""


class MalformedColormapError(ThermocrackError, ValueError):
    """A pixel is inconsistent with the radiometric colormap.

    Carries the (row, col) of the first offending pixel.
    """

    def __init__(self, row, col, pixel):
        self.row = row
        self.col = col
        self.pixel = tuple(int(v) for v in pixel)
        super().__init__(
            f"pixel at row={row}, col={col} value={self.pixel} does not match "
            f"the radiometric colormap"
        )


class DegenerateGeometryError(ThermocrackError, ValueError):
    """A crack mask is empty or leaves no surrounding ring to compare against."""


class GenerationError(ThermocrackError, RuntimeError):
    """Synthetic sample generation exhausted its retry budget."""


class ManifestError(ThermocrackError, ValueError):
    """A manifest file failed to parse or validate."""


class CheckpointFormatError(ThermocrackError, ValueError):
    """A checkpoint file has a bad magic, version, or field value."""


class CheckpointCorruptionError(ThermocrackError, ValueError):
    """A checkpoint file is truncated or fails its CRC check.

    ``offset`` is the byte offset at which the problem was detected.
    """

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class BuildError(ThermocrackError, ValueError):
    """Network layers do not compose; names the offending layer."""


class ConfigError(ThermocrackError, ValueError):
    """A run configuration is invalid or incomplete."""


class TrainingDivergedError(ThermocrackError, RuntimeError):
    """Training produced non-finite parameters."""
