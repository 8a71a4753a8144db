"""Voxel mapping, exact distance fields, and sampling-based MPC for manipulators.

The package closes a perceive->map->plan->execute loop on the CPU:

- ``geometry``: rigid transforms on SE(3) and their Lie-algebra maps.
- ``robot``: serial kinematic chains and the sphere collision proxy.
- ``mapping``: voxel-projection occupancy grids and an exact separable
  squared Euclidean distance transform with robot masking.
- ``planner``: sampling-based model predictive control over batched
  double-integrator rollouts.
- ``sim``: deterministic scenario simulation with synthetic depth rendering.
- ``cli``: episode runner, micro-benchmarks, and oracle suites.
"""

# Thread pool sizing must happen before numba is first imported anywhere in
# the process, otherwise the pool is pinned to the machine's core count and
# requests for more workers (needed for schedule-independence testing) fail.
from voxplan import parallel as _parallel  # noqa: F401  (import for side effect)

__version__ = "0.1.0"

from voxplan.errors import (
    DegenerateRotation,
    DimensionMismatch,
    FrameMismatch,
    VolumeOutOfBounds,
    WeightMismatch,
)

__all__ = [
    "__version__",
    "DegenerateRotation",
    "DimensionMismatch",
    "FrameMismatch",
    "VolumeOutOfBounds",
    "WeightMismatch",
]
