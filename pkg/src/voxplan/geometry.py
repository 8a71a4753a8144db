"""Rigid-body transforms on SE(3), their Lie-algebra maps, and quaternions.

Rotations are stored as 3x3 matrices; quaternions appear only at the
orientation-metric boundary. All types are immutable after construction and
safe to share across threads.

Pose serialization convention: 7 reals ``[tx, ty, tz, qw, qx, qy, qz]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from voxplan.errors import DegenerateRotation

# Below this angle the trigonometric coefficients of V(theta) and its inverse
# are evaluated by second-order Taylor series to avoid cancellation in
# (1 - cos t)/t^2 and friends. Relative error of the switch is ~t^4/1e2.
SMALL_ANGLE = 1e-6

# log() is rejected within this margin of pi, where the axis is not unique.
PI_MARGIN = 1e-6

_ORTHONORMAL_TOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric (cross-product) matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def _vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _as_vec3(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 entries, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Rotation3:
    """Element of SO(3) stored as a row-major 3x3 matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        err = np.abs(m.T @ m - np.eye(3)).max()
        if err > _ORTHONORMAL_TOL:
            raise ValueError(f"matrix is not orthonormal (|R^T R - I| = {err:.3e})")
        det = np.linalg.det(m)
        if abs(det - 1.0) > _ORTHONORMAL_TOL:
            raise ValueError(f"matrix is not a proper rotation (det = {det!r})")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity() -> "Rotation3":
        return Rotation3(np.eye(3))

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Rotation3":
        """Rodrigues formula for a rotation of `angle` radians about `axis`."""
        axis = _as_vec3(axis, "axis")
        norm = np.linalg.norm(axis)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"axis must be unit length, |axis| = {norm!r}")
        return Rotation3(_so3_exp(axis * angle))

    @staticmethod
    def rot_x(angle: float) -> "Rotation3":
        return Rotation3.from_axis_angle((1.0, 0.0, 0.0), angle)

    @staticmethod
    def rot_y(angle: float) -> "Rotation3":
        return Rotation3.from_axis_angle((0.0, 1.0, 0.0), angle)

    @staticmethod
    def rot_z(angle: float) -> "Rotation3":
        return Rotation3.from_axis_angle((0.0, 0.0, 1.0), angle)

    def compose(self, other: "Rotation3") -> "Rotation3":
        return Rotation3(self.matrix @ other.matrix)

    def __matmul__(self, other: "Rotation3") -> "Rotation3":
        return self.compose(other)

    def inverse(self) -> "Rotation3":
        return Rotation3(self.matrix.T)

    def apply(self, v) -> np.ndarray:
        return self.matrix @ _as_vec3(v, "v")

    def angle(self) -> float:
        """Rotation angle in [0, pi]."""
        c = 0.5 * (np.trace(self.matrix) - 1.0)
        return math.acos(min(1.0, max(-1.0, c)))

    def to_quaternion(self) -> "UnitQuaternion":
        return UnitQuaternion.from_rotation(self)


@dataclass(frozen=True)
class RigidTransform:
    """Element of SE(3): rotation plus translation in meters."""

    rotation: Rotation3
    translation: np.ndarray

    def __post_init__(self):
        t = _as_vec3(self.translation, "translation").copy()
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(Rotation3.identity(), np.zeros(3))

    @staticmethod
    def from_translation(t) -> "RigidTransform":
        return RigidTransform(Rotation3.identity(), t)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation.apply(other.translation) + self.translation,
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        rinv = self.rotation.inverse()
        return RigidTransform(rinv, -rinv.apply(self.translation))

    def apply(self, point) -> np.ndarray:
        return self.rotation.apply(point) + self.translation

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"homogeneous matrix must be 4x4, got {m.shape}")
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
            raise ValueError("last row of a homogeneous matrix must be [0, 0, 0, 1]")
        return RigidTransform(Rotation3(m[:3, :3]), m[:3, 3])

    def to_vec7(self) -> np.ndarray:
        """Serialize as [tx, ty, tz, qw, qx, qy, qz]."""
        q = self.rotation.to_quaternion()
        return np.array([*self.translation, q.w, q.x, q.y, q.z])

    @staticmethod
    def from_vec7(vec) -> "RigidTransform":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        if vec.shape != (7,):
            raise ValueError(f"pose vector must have 7 entries, got {vec.shape}")
        q = UnitQuaternion(vec[3], vec[4], vec[5], vec[6])
        return RigidTransform(q.to_rotation(), vec[:3])


@dataclass(frozen=True)
class Twist6:
    """se(3) element: translational part v (meters) and rotation vector omega (radians)."""

    v: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        v = _as_vec3(self.v, "v").copy()
        w = _as_vec3(self.omega, "omega").copy()
        v.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "omega", w)

    @staticmethod
    def from_vector(xi) -> "Twist6":
        xi = np.asarray(xi, dtype=float).reshape(-1)
        if xi.shape != (6,):
            raise ValueError(f"twist vector must have 6 entries, got {xi.shape}")
        return Twist6(xi[:3], xi[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.omega])


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion (w, x, y, z); q and -q encode the same rotation."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n < 1e-12:
            raise ValueError("quaternion norm is zero")
        object.__setattr__(self, "w", self.w / n)
        object.__setattr__(self, "x", self.x / n)
        object.__setattr__(self, "y", self.y / n)
        object.__setattr__(self, "z", self.z / n)

    @staticmethod
    def identity() -> "UnitQuaternion":
        return UnitQuaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_rotation(r: Rotation3) -> "UnitQuaternion":
        # Shepperd's method: pick the largest of (w, x, y, z) for stability.
        m = r.matrix
        tr = np.trace(m)
        if tr > 0.0:
            s = math.sqrt(tr + 1.0) * 2.0
            return UnitQuaternion(
                0.25 * s,
                (m[2, 1] - m[1, 2]) / s,
                (m[0, 2] - m[2, 0]) / s,
                (m[1, 0] - m[0, 1]) / s,
            )
        if m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            return UnitQuaternion(
                (m[2, 1] - m[1, 2]) / s,
                0.25 * s,
                (m[0, 1] + m[1, 0]) / s,
                (m[0, 2] + m[2, 0]) / s,
            )
        if m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            return UnitQuaternion(
                (m[0, 2] - m[2, 0]) / s,
                (m[0, 1] + m[1, 0]) / s,
                0.25 * s,
                (m[1, 2] + m[2, 1]) / s,
            )
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        return UnitQuaternion(
            (m[1, 0] - m[0, 1]) / s,
            (m[0, 2] + m[2, 0]) / s,
            (m[1, 2] + m[2, 1]) / s,
            0.25 * s,
        )

    def to_rotation(self) -> Rotation3:
        w, x, y, z = self.w, self.x, self.y, self.z
        return Rotation3(
            np.array(
                [
                    [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                    [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                    [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
                ]
            )
        )

    def dot(self, other: "UnitQuaternion") -> float:
        return self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z


def _so3_exp(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    k = skew(omega)
    if theta < SMALL_ANGLE:
        a = 1.0 - theta**2 / 6.0
        b = 0.5 - theta**2 / 24.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * (k @ k)


def _so3_log(m: np.ndarray) -> np.ndarray:
    c = 0.5 * (np.trace(m) - 1.0)
    theta = math.acos(min(1.0, max(-1.0, c)))
    if theta >= math.pi - PI_MARGIN:
        raise DegenerateRotation(
            f"rotation angle {theta!r} is within {PI_MARGIN} of pi; the logarithm is not unique"
        )
    # vee(R - R^T)/2 has norm sin(theta); rescale to norm theta.
    s = 0.5 * _vee(m - m.T)
    if theta < SMALL_ANGLE:
        scale = 1.0 + theta**2 / 6.0
    else:
        scale = theta / math.sin(theta)
    return scale * s


def _v_coeffs(theta: float) -> tuple[float, float]:
    if theta < SMALL_ANGLE:
        return 0.5 - theta**2 / 24.0, 1.0 / 6.0 - theta**2 / 120.0
    return (1.0 - math.cos(theta)) / theta**2, (theta - math.sin(theta)) / theta**3


def _v_matrix(omega: np.ndarray) -> np.ndarray:
    """V(theta) relating the se(3) translational component to the SE(3) translation."""
    theta = np.linalg.norm(omega)
    c1, c2 = _v_coeffs(theta)
    k = skew(omega)
    return np.eye(3) + c1 * k + c2 * (k @ k)


# The closed form of the V-inverse curvature coefficient divides by
# theta^2 (1 - cos theta); below this angle the cancellation in 1 - cos theta
# costs more accuracy than the truncation of its Taylor series.
_V_INV_SERIES_ANGLE = 0.1


def _v_inv_coeff(theta: float) -> float:
    if theta < _V_INV_SERIES_ANGLE:
        t2 = theta * theta
        return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    return (1.0 - 0.5 * theta * math.sin(theta) / (1.0 - math.cos(theta))) / theta**2


def _v_inverse(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    k = skew(omega)
    return np.eye(3) - 0.5 * k + _v_inv_coeff(theta) * (k @ k)


def se3_log(transform: RigidTransform) -> Twist6:
    """Logarithm map SE(3) -> se(3), returning (v, omega).

    Raises DegenerateRotation when the rotation angle is within PI_MARGIN of
    pi, where the rotation axis (and hence the log) is not unique.
    """
    omega = _so3_log(transform.rotation.matrix)
    v = _v_inverse(omega) @ transform.translation
    return Twist6(v, omega)


def se3_exp(xi: Twist6) -> RigidTransform:
    """Exponential map se(3) -> SE(3)."""
    r = _so3_exp(xi.omega)
    t = _v_matrix(xi.omega) @ xi.v
    return RigidTransform(Rotation3(r), t)


def relative_transform(goal: RigidTransform, current: RigidTransform) -> RigidTransform:
    """Transform of `current` expressed in the `goal` frame: goal^-1 o current."""
    return goal.inverse().compose(current)


def quaternion_angle(a: UnitQuaternion, b: UnitQuaternion) -> float:
    """Minimal rotation angle between two orientations, in [0, pi]."""
    d = min(1.0, max(-1.0, abs(a.dot(b))))
    return 2.0 * math.acos(d)
