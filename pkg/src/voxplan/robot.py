"""Serial kinematic chain, forward kinematics, and the sphere collision proxy.

A chain is an ordered list of revolute joints. Frame i (for i >= 1) is the
frame after joint i, reached as

    T^i = T^(i-1) o parent_offset_i o rot(axis_i, q_i)

with T^0 the base pose, so a chain of n joints yields n + 1 frames and the
last one is the end-effector flange.

The collision proxy is a list of spheres rigidly attached to link frames,
plus an explicit set of sphere index pairs checked for self-collision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from voxplan.errors import DimensionMismatch
from voxplan.geometry import RigidTransform, Rotation3

ROBOT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class JointSpec:
    """One revolute joint: fixed offset from the parent frame plus an axis and limits."""

    parent_offset: RigidTransform
    axis: np.ndarray
    position_limits: tuple[float, float]
    velocity_limit: float
    acceleration_limit: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(-1)
        if axis.shape != (3,):
            raise ValueError(f"axis must have 3 entries, got {axis.shape}")
        norm = np.linalg.norm(axis)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"axis must be unit length, |axis| = {norm!r}")
        axis = axis.copy()
        axis.flags.writeable = False
        object.__setattr__(self, "axis", axis)
        lo, hi = self.position_limits
        if not lo < hi:
            raise ValueError(f"position limits must satisfy lo < hi, got [{lo}, {hi}]")
        if self.velocity_limit <= 0.0 or self.acceleration_limit <= 0.0:
            raise ValueError("velocity and acceleration limits must be positive")


@dataclass(frozen=True)
class KinematicChain:
    """Ordered revolute joints hung from a base pose."""

    joints: tuple[JointSpec, ...]
    base_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    name: str = "chain"

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ValueError("chain needs at least one joint")
        object.__setattr__(self, "joints", tuple(self.joints))

    @property
    def dof(self) -> int:
        return len(self.joints)

    def position_limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([j.position_limits[0] for j in self.joints])
        hi = np.array([j.position_limits[1] for j in self.joints])
        return lo, hi

    def velocity_limits(self) -> np.ndarray:
        return np.array([j.velocity_limit for j in self.joints])

    def acceleration_limits(self) -> np.ndarray:
        return np.array([j.acceleration_limit for j in self.joints])


@dataclass(frozen=True)
class Sphere:
    link: int
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        if c.shape != (3,):
            raise ValueError(f"sphere center must have 3 entries, got {c.shape}")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "center", c)
        if self.radius <= 0.0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class SphereModel:
    """Sphere decomposition of the robot body plus the self-collision pair set."""

    spheres: tuple[Sphere, ...]
    self_pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "spheres", tuple(self.spheres))
        pairs = tuple(tuple(sorted(p)) for p in self.self_pairs)
        n = len(self.spheres)
        for i, j in pairs:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"self pair ({i}, {j}) references an unknown sphere")
            if i == j:
                raise ValueError(f"self pair ({i}, {j}) repeats one sphere")
            link_i = self.spheres[i].link
            link_j = self.spheres[j].link
            if abs(link_i - link_j) <= 1:
                raise ValueError(
                    f"self pair ({i}, {j}) joins spheres on the same or adjacent "
                    f"links ({link_i}, {link_j}); those are excluded by construction"
                )
        object.__setattr__(self, "self_pairs", pairs)

    @property
    def count(self) -> int:
        return len(self.spheres)

    def radii(self) -> np.ndarray:
        return np.array([s.radius for s in self.spheres])

    def max_radius(self) -> float:
        return max(s.radius for s in self.spheres)

    def validate_links(self, chain: KinematicChain) -> None:
        for idx, s in enumerate(self.spheres):
            if not 0 <= s.link <= chain.dof:
                raise ValueError(
                    f"sphere {idx} is attached to link {s.link}, "
                    f"but the chain has links 0..{chain.dof}"
                )


@dataclass(frozen=True)
class JointState:
    """Joint positions, velocities, and accelerations."""

    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        qd = np.asarray(self.qd, dtype=float).reshape(-1)
        qdd = np.asarray(self.qdd, dtype=float).reshape(-1)
        if not q.shape == qd.shape == qdd.shape:
            raise DimensionMismatch(
                f"q, qd, qdd must agree in length, got {q.shape}, {qd.shape}, {qdd.shape}"
            )
        for name, arr in (("q", q), ("qd", qd), ("qdd", qdd)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @staticmethod
    def resting(q) -> "JointState":
        q = np.asarray(q, dtype=float)
        return JointState(q, np.zeros_like(q), np.zeros_like(q))


def forward_kinematics(chain: KinematicChain, q) -> list[RigidTransform]:
    """All link frames for configuration q; the last entry is the flange.

    Joint limits are deliberately not enforced: out-of-limit configurations
    must still evaluate so they can be penalized rather than rejected.
    """
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape != (chain.dof,):
        raise DimensionMismatch(
            f"expected {chain.dof} joint values, got {q.shape[0]}"
        )
    frames = [chain.base_pose]
    current = chain.base_pose
    for joint, angle in zip(chain.joints, q):
        rot = RigidTransform(Rotation3.from_axis_angle(joint.axis, float(angle)), np.zeros(3))
        current = current @ joint.parent_offset @ rot
        frames.append(current)
    return frames


def sphere_positions(
    chain: KinematicChain, q, model: SphereModel
) -> tuple[np.ndarray, np.ndarray]:
    """World-space sphere centers and radii at configuration q."""
    frames = forward_kinematics(chain, q)
    centers = np.empty((model.count, 3))
    for i, s in enumerate(model.spheres):
        centers[i] = frames[s.link].apply(s.center)
    return centers, model.radii()


def self_collision_distances(
    centers: np.ndarray, radii: np.ndarray, pairs
) -> np.ndarray:
    """Signed center-to-center distances minus summed radii; negative overlaps."""
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    out = np.empty(len(pairs))
    for k, (i, j) in enumerate(pairs):
        gap = np.linalg.norm(centers[i] - centers[j])
        out[k] = gap - (radii[i] + radii[j])
    return out


def load_robot(path) -> tuple[KinematicChain, SphereModel]:
    """Load a chain and sphere model from the YAML robot description."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return robot_from_dict(doc)


def robot_from_dict(doc: dict) -> tuple[KinematicChain, SphereModel]:
    version = doc.get("schema_version")
    if version != ROBOT_SCHEMA_VERSION:
        raise ValueError(
            f"unsupported robot schema_version {version!r}, expected {ROBOT_SCHEMA_VERSION}"
        )
    base = RigidTransform.from_vec7(doc.get("base_pose", [0, 0, 0, 1, 0, 0, 0]))
    joints = []
    for idx, j in enumerate(doc["joints"]):
        try:
            joints.append(
                JointSpec(
                    parent_offset=RigidTransform.from_vec7(j["offset"]),
                    axis=j["axis"],
                    position_limits=tuple(j["position_limits"]),
                    velocity_limit=float(j["velocity_limit"]),
                    acceleration_limit=float(j["acceleration_limit"]),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"joint {idx}: {exc}") from exc
    chain = KinematicChain(tuple(joints), base, name=doc.get("name", "chain"))
    spheres = tuple(
        Sphere(link=int(s["link"]), center=s["center"], radius=float(s["radius"]))
        for s in doc.get("spheres", [])
    )
    pairs = tuple((int(a), int(b)) for a, b in doc.get("self_pairs", []))
    model = SphereModel(spheres, pairs)
    model.validate_links(chain)
    return chain, model
