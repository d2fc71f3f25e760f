"""Exception types raised across the package."""


class TriPathError(Exception):
    """Base class for every error this package raises on purpose."""


class MissingFile(TriPathError):
    pass


class ShapeMismatch(TriPathError):
    pass


class ShapeError(TriPathError):
    pass


class LabelOutOfRange(TriPathError):
    pass


class InvalidArg(TriPathError):
    pass


class MissingTensor(TriPathError):
    pass


class InvalidWeights(TriPathError):
    pass


class EmptyMatrix(TriPathError):
    pass


class NonFiniteLoss(TriPathError):
    pass


class AllZeroMap(TriPathError):
    pass


class CheckpointMismatch(TriPathError):
    pass
