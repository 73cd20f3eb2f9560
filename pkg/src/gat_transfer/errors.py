"""Exception types shared across the pipeline.

CLI-facing errors carry the process exit code they map to.
"""


class GatTransferError(Exception):
    """Base class for errors that end a CLI invocation."""

    exit_code = 1


class ConfigError(GatTransferError):
    """Invalid configuration, unknown key or bad override."""

    exit_code = 1


class DatasetError(GatTransferError):
    """Missing, empty or malformed dataset."""

    exit_code = 2


class CheckpointError(GatTransferError):
    """Missing or incompatible checkpoint archive."""

    exit_code = 3


class ImageReadError(GatTransferError):
    """Image file could not be read or decoded."""

    exit_code = 4

    def __init__(self, path, reason: str = ""):
        self.path = path
        message = f"Cannot read image: {path}"
        if reason:
            message += f" ({reason})"
        super().__init__(message)


class BoundsError(ValueError):
    """Crop rectangle falls outside the image."""


class ShapeError(ValueError):
    """Tensor or image has an unexpected shape."""


class NoFaceDetected(Exception):
    """The landmark detector found no face in the image."""

    def __init__(self, image_id: str = ""):
        self.image_id = image_id
        super().__init__(f"No face detected{f' in {image_id}' if image_id else ''}")


class UnknownLayerError(KeyError):
    """Requested feature layer is not a known VGG-16 tap."""


class NonFiniteLossError(GatTransferError):
    """A loss became NaN or infinite during training."""

    exit_code = 2

    def __init__(self, term: str, batch_ids: list[str]):
        self.term = term
        self.batch_ids = list(batch_ids)
        super().__init__(
            f"Non-finite {term} loss on batch: {', '.join(self.batch_ids) or '<unknown>'}"
        )


class SmokeStageError(GatTransferError):
    """A stage of the end-to-end smoke run failed."""

    def __init__(self, stage: str, reason: str, exit_code: int = 1):
        self.stage = stage
        self.exit_code = exit_code
        super().__init__(f"Smoke stage '{stage}' failed: {reason}")
