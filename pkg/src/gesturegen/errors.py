"""Exception types shared across the package."""


class GestureError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GestureError):
    pass


class ShapeError(GestureError):
    pass


class DegenerateBoneError(GestureError):
    def __init__(self, frame: int, bone: str):
        self.frame = frame
        self.bone = bone
        super().__init__(f"zero-length bone '{bone}' at frame {frame}")


class InsufficientFramesError(GestureError):
    pass


class WindowOverflowError(GestureError):
    pass


class CorpusError(GestureError):
    pass


class CheckpointError(GestureError):
    pass


class DivergenceError(GestureError):
    pass


class OutputLockError(GestureError):
    pass
