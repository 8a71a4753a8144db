"""Exception types shared across the package."""


class DegenerateRotation(ValueError):
    """Rotation angle at or beyond pi, where the matrix logarithm is non-unique."""


class DimensionMismatch(ValueError):
    """Vector or matrix argument has the wrong number of entries."""


class FrameMismatch(ValueError):
    """Grid and sensor describe incompatible geometry."""


class VolumeOutOfBounds(ValueError):
    """Requested voxel box does not fit inside the grid."""


class WeightMismatch(ValueError):
    """Sample weights do not form a convex combination."""
