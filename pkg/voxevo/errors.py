"""Exception hierarchy shared by every voxevo module."""


class VoxevoError(Exception):
    """Base class for all errors raised by voxevo"""

    exit_code = 1


class ConfigError(VoxevoError):
    exit_code = 2

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class EmptyRobot(VoxevoError):
    pass


class ShapeMismatch(VoxevoError):
    pass


class ZeroLengthSpring(VoxevoError):
    def __init__(self, spring: int, t: float):
        self.spring = spring
        self.t = t
        super().__init__(f"spring {spring} collapsed to zero length at t={t:.6f}s")


class Diverged(VoxevoError):
    def __init__(self, t: float, reason: str = "coordinate out of range"):
        self.t = t
        super().__init__(f"simulation diverged at t={t:.6f}s: {reason}")


class ParseError(VoxevoError):
    pass


class VersionMismatch(VoxevoError):
    exit_code = 3


class CorruptCheckpoint(VoxevoError):
    exit_code = 3


class IoError(VoxevoError):
    exit_code = 4
