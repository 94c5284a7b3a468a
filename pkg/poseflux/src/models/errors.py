from typing import Optional


class PosefluxError(Exception):
    """Base class for every error raised by poseflux."""


class InputError(PosefluxError, ValueError):
    """A file, document or flag value could not be accepted."""


class PoseFormatError(InputError):
    def __init__(
        self,
        message: str,
        frame: Optional[int] = None,
        keypoint: Optional[int] = None,
    ):
        self.frame = frame
        self.keypoint = keypoint
        where = []
        if frame is not None:
            where.append(f"frame {frame}")
        if keypoint is not None:
            where.append(f"keypoint {keypoint}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class ConfigError(InputError):
    pass


class CheckpointError(InputError):
    pass


class MapFormatError(InputError):
    pass


class RetargetError(PosefluxError):
    def __init__(self, message: str, frame: Optional[int] = None):
        self.frame = frame
        prefix = f"frame {frame}: " if frame is not None else ""
        super().__init__(f"{prefix}{message}")


class NumericalError(PosefluxError, ArithmeticError):
    """Raised when a loss or gradient stops being finite."""
