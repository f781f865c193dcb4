"""Exception types raised across the package."""


class DensePackError(Exception):
    """Base class for all package errors."""


class NonPositiveDepth(DensePackError, ValueError):
    pass


class EmptyCloud(DensePackError, ValueError):
    pass


class EmptyMesh(DensePackError, ValueError):
    pass


class InvalidBox(DensePackError, ValueError):
    pass


class IndexOutOfRange(DensePackError, IndexError):
    pass


class NonWatertightMesh(DensePackError, ValueError):
    pass


class EmptySurface(DensePackError, ValueError):
    pass


class CountMismatch(DensePackError, ValueError):
    pass


class NoValidPixels(DensePackError, ValueError):
    pass


class OutOfBounds(DensePackError, ValueError):
    """A footprint placed at a cell extends past the height-map grid."""


class ShapeMismatch(DensePackError, ValueError):
    pass


class NoFeasiblePlan(DensePackError):
    """No sampled or enumerated candidate passed the feasibility check."""


class PoolTooSmall(DensePackError, ValueError):
    pass


class MissingKey(DensePackError, KeyError):
    pass


class EndiannessMismatch(DensePackError, ValueError):
    pass


class InvalidSpec(DensePackError, ValueError):
    pass


class IoFailure(DensePackError, OSError):
    pass
