"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An argument violates a documented precondition."""


class ConfigError(ValueError):
    """A run configuration is malformed (unknown keys, bad values, empty phases)."""


class RasterError(ValueError):
    """Base class for raster container parse failures."""


class BadMagic(RasterError):
    """The container does not start with the expected magic bytes."""


class BandCountMismatch(RasterError):
    """Band count in the payload disagrees with the sidecar's source."""


class TruncatedPayload(RasterError):
    """The container ends before the declared band data is complete."""


class CheckpointError(ValueError):
    """A checkpoint manifest/blob pair is inconsistent or incomplete."""


class TrainingDiverged(RuntimeError):
    """Pre-training hit a non-finite loss; carries the failing step index."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
