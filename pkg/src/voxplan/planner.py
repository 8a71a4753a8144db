"""Sampling-based model predictive control for joint-space motion.

Each planning cycle samples control perturbations around a nominal
acceleration sequence, rolls out a semi-implicit double integrator per
sample, scores every rollout with one unified objective (pose tracking,
collision, joint limits, smoothness, posture regularization, terminal pose),
and combines the samples by softmin weighting. Only the first action of the
updated sequence is executed; the rest is shifted to warm-start the next
cycle.

The scalar cost functions in this module are the reference implementations;
`voxplan.batch.evaluate_batch` evaluates the same objective over the whole
sample batch in parallel, and the tests hold the two paths together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from voxplan import batch as _batch
from voxplan.errors import DegenerateRotation, DimensionMismatch, WeightMismatch
from voxplan.geometry import (
    RigidTransform,
    quaternion_angle,
    relative_transform,
    se3_log,
)
from voxplan.mapping import DistanceField, MapSnapshot, query_distance
from voxplan.robot import JointState, KinematicChain, SphereModel, forward_kinematics

TERM_NAMES = ("pose", "collision", "limits", "smoothness", "nullspace", "terminal")


@dataclass(frozen=True)
class PlannerParams:
    """Horizon, sampling, and objective weights for one planner instance.

    sigma is the per-joint sampling standard deviation in rad/s^2 (scalars
    broadcast); margin_frac tightens each limit interval by that fraction of
    its width before the limit penalty activates.
    """

    horizon: int
    samples: int
    dt: float
    lam: float
    sigma: np.ndarray
    noise_window: int
    pose_weight: np.ndarray
    terminal_weight: np.ndarray
    w_env: float
    w_self: float
    w_q: float
    w_qd: float
    w_qdd: float
    w_s: float
    w_ns: float
    d_act: float
    margin_frac: float
    q_ref: np.ndarray

    def __post_init__(self):
        if self.horizon < 1 or self.samples < 1:
            raise ValueError("horizon and samples must be >= 1")
        if self.dt <= 0.0 or self.lam <= 0.0:
            raise ValueError("dt and lam must be positive")
        q_ref = np.asarray(self.q_ref, dtype=float).reshape(-1).copy()
        sigma = np.broadcast_to(
            np.asarray(self.sigma, dtype=float), q_ref.shape
        ).copy()
        if (sigma < 0.0).any():
            raise ValueError("sigma must be non-negative")
        for name, arr in (("q_ref", q_ref), ("sigma", sigma)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        for name, psd_only in (("pose_weight", True), ("terminal_weight", False)):
            w = np.asarray(getattr(self, name), dtype=float)
            if w.shape != (6, 6):
                raise ValueError(f"{name} must be 6x6, got {w.shape}")
            if np.abs(w - w.T).max() > 1e-9:
                raise ValueError(f"{name} must be symmetric")
            eigs = np.linalg.eigvalsh(w)
            if psd_only and eigs.min() < -1e-9:
                raise ValueError(f"{name} must be positive semidefinite")
            if not psd_only and eigs.min() <= 1e-12:
                raise ValueError(f"{name} must be positive definite")
            w = w.copy()
            w.flags.writeable = False
            object.__setattr__(self, name, w)
        for name in ("w_env", "w_self", "w_q", "w_qd", "w_qdd", "w_s", "w_ns"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if self.d_act < 0.0 or not 0.0 <= self.margin_frac < 0.5:
            raise ValueError("d_act must be >= 0 and margin_frac in [0, 0.5)")

    @property
    def dof(self) -> int:
        return self.q_ref.shape[0]


@dataclass(frozen=True)
class Trajectory:
    """Positions, velocities, and accelerations over one horizon (H+1 rows)."""

    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray

    @property
    def horizon(self) -> int:
        return self.q.shape[0] - 1


@dataclass(frozen=True)
class CostBreakdown:
    pose: float
    collision: float
    limits: float
    smoothness: float
    nullspace: float
    terminal: float

    @property
    def total(self) -> float:
        return (
            self.pose
            + self.collision
            + self.limits
            + self.smoothness
            + self.nullspace
            + self.terminal
        )

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in TERM_NAMES}


@dataclass
class RolloutBatch:
    """All sampled sequences of one planning cycle with their scores."""

    controls: np.ndarray  # (M, H, n)
    perturbations: np.ndarray  # (M, H, n)
    costs: np.ndarray  # (M,)
    terms: np.ndarray  # (M, 6), columns ordered as TERM_NAMES
    traj_q: np.ndarray | None = None  # (M, H+1, n)
    traj_qd: np.ndarray | None = None
    sphere_positions: np.ndarray | None = None  # (M, H, n_spheres, 3)


@dataclass(frozen=True)
class StepDiagnostics:
    best_cost: float
    weighted_cost: float
    breakdown: CostBreakdown
    e_pos: float
    e_ori: float


@dataclass(frozen=True)
class StepResult:
    command: np.ndarray
    next_nominal: np.ndarray
    diagnostics: StepDiagnostics


@dataclass(frozen=True)
class ConvergenceCriteria:
    """Termination test: small pose error and a stalled objective, held
    for stable_cycles consecutive planning cycles."""

    pos_tol: float = 0.010
    ori_tol: float | None = None
    rel_improvement: float = 1e-3
    stable_cycles: int = 5


@lru_cache(maxsize=32)
def smoothing_matrix(horizon: int, window: int) -> np.ndarray:
    """Moving-average matrix over the horizon, rows scaled to unit L2 norm
    so smoothing preserves the per-step sampling variance."""
    if window <= 1:
        return np.eye(horizon)
    back = (window - 1) // 2
    fwd = window // 2
    a = np.zeros((horizon, horizon))
    for k in range(horizon):
        lo = max(0, k - back)
        hi = min(horizon, k + fwd + 1)
        a[k, lo:hi] = 1.0
        a[k] /= math.sqrt(hi - lo)
    return a


def sample_perturbations(params: PlannerParams, rng_seed: int) -> np.ndarray:
    """Zero-mean smoothed Gaussian perturbations, (samples, horizon, dof).

    Sample m > 0 draws from its own counter-based stream keyed by
    (rng_seed, m), so the batch is identical no matter how it is later
    scheduled. Sample 0 is reserved as the zero perturbation: the nominal
    sequence always competes in its own batch.
    """
    m_count, h, n = params.samples, params.horizon, params.dof
    eps = np.empty((m_count, h, n))
    eps[0] = 0.0
    seed = int(rng_seed) & 0xFFFFFFFFFFFFFFFF
    for m in range(1, m_count):
        gen = np.random.Generator(
            np.random.Philox(key=np.array([seed, m], dtype=np.uint64))
        )
        eps[m] = gen.standard_normal((h, n))
    if params.noise_window > 1 and m_count > 1:
        eps = np.einsum("hk,mkn->mhn", smoothing_matrix(h, params.noise_window), eps)
    eps *= params.sigma
    return eps


def rollout(state: JointState, controls: np.ndarray, dt: float) -> Trajectory:
    """Semi-implicit Euler double integrator driven by joint accelerations."""
    controls = np.asarray(controls, dtype=float)
    if controls.ndim != 2 or controls.shape[1] != state.q.shape[0]:
        raise DimensionMismatch(
            f"controls shape {controls.shape} does not match dof {state.q.shape[0]}"
        )
    h = controls.shape[0]
    n = controls.shape[1]
    q = np.empty((h + 1, n))
    qd = np.empty((h + 1, n))
    qdd = np.zeros((h + 1, n))
    q[0] = state.q
    qd[0] = state.qd
    qdd[:h] = controls
    for k in range(h):
        qd[k + 1] = qd[k] + controls[k] * dt
        q[k + 1] = q[k] + qd[k + 1] * dt
    return Trajectory(q, qd, qdd)


def _pose_twist(chain: KinematicChain, q: np.ndarray, goal: RigidTransform) -> np.ndarray:
    ee = forward_kinematics(chain, q)[-1]
    return se3_log(relative_transform(goal, ee)).as_vector()


def pose_cost(
    chain: KinematicChain, traj: Trajectory, goal: RigidTransform, pose_weight
) -> float:
    """Sum over running steps of the weighted squared SE(3) pose error."""
    w = np.asarray(pose_weight, dtype=float)
    total = 0.0
    for k in range(traj.horizon):
        xi = _pose_twist(chain, traj.q[k], goal)
        total += 0.5 * xi @ w @ xi
    return total


def collision_cost(
    sphere_pos: np.ndarray,
    field: DistanceField | None,
    model: SphereModel,
    params: PlannerParams,
) -> float:
    """Quadratic penalties for environment proximity and self overlap.

    `sphere_pos` holds world sphere centers per running step, shape
    (steps, n_spheres, 3). The environment term activates within d_act of an
    obstacle; the self term activates only on actual overlap.
    """
    radii = model.radii()
    total = 0.0
    for k in range(sphere_pos.shape[0]):
        for s in range(sphere_pos.shape[1]):
            dist = (
                query_distance(field, sphere_pos[k, s]) if field is not None else np.inf
            )
            gap = params.d_act - (dist - radii[s])
            if gap > 0.0:
                total += params.w_env * gap * gap
        for i, j in model.self_pairs:
            gap = float(
                np.linalg.norm(sphere_pos[k, i] - sphere_pos[k, j])
            ) - (radii[i] + radii[j])
            if gap < 0.0:
                total += params.w_self * gap * gap
    return total


def tightened_limits(chain: KinematicChain, margin_frac: float):
    """Limit intervals shrunk by margin_frac of their width, per quantity."""
    pos_lo, pos_hi = chain.position_limits()
    eps_q = margin_frac * (pos_hi - pos_lo)
    vel = chain.velocity_limits()
    eps_v = margin_frac * 2.0 * vel
    acc = chain.acceleration_limits()
    eps_a = margin_frac * 2.0 * acc
    return (
        pos_lo + eps_q,
        pos_hi - eps_q,
        -vel + eps_v,
        vel - eps_v,
        -acc + eps_a,
        acc - eps_a,
    )


def _violation(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, x - hi) + np.minimum(0.0, x - lo)


def joint_limit_cost(
    traj: Trajectory, chain: KinematicChain, params: PlannerParams
) -> float:
    """Quadratic penalty for leaving the tightened position, velocity, and
    acceleration intervals, accumulated over running steps."""
    pos_lo, pos_hi, vel_lo, vel_hi, acc_lo, acc_hi = tightened_limits(
        chain, params.margin_frac
    )
    h = traj.horizon
    vq = _violation(traj.q[:h], pos_lo, pos_hi)
    vv = _violation(traj.qd[:h], vel_lo, vel_hi)
    va = _violation(traj.qdd[:h], acc_lo, acc_hi)
    return float(
        params.w_q * (vq**2).sum()
        + params.w_qd * (vv**2).sum()
        + params.w_qdd * (va**2).sum()
    )


def smoothness_cost(traj: Trajectory, w_s: float) -> float:
    return float(w_s * (traj.qdd[: traj.horizon] ** 2).sum())


def nullspace_cost(traj: Trajectory, q_ref, w_ns: float) -> float:
    q_ref = np.asarray(q_ref, dtype=float)
    return float(w_ns * ((traj.q[: traj.horizon] - q_ref) ** 2).sum())


def terminal_cost(ee_pose: RigidTransform, goal: RigidTransform, terminal_weight) -> float:
    w = np.asarray(terminal_weight, dtype=float)
    xi = se3_log(relative_transform(goal, ee_pose)).as_vector()
    return float(0.5 * xi @ w @ xi)


def total_cost(
    chain: KinematicChain,
    model: SphereModel,
    traj: Trajectory,
    field: DistanceField | None,
    goal: RigidTransform,
    params: PlannerParams,
) -> CostBreakdown:
    """Reference evaluation of the full objective for one trajectory."""
    h = traj.horizon
    sphere_pos = np.empty((h, model.count, 3))
    for k in range(h):
        frames = forward_kinematics(chain, traj.q[k])
        for s, sphere in enumerate(model.spheres):
            sphere_pos[k, s] = frames[sphere.link].apply(sphere.center)
    ee_final = forward_kinematics(chain, traj.q[h])[-1]
    return CostBreakdown(
        pose=pose_cost(chain, traj, goal, params.pose_weight),
        collision=collision_cost(sphere_pos, field, model, params),
        limits=joint_limit_cost(traj, chain, params),
        smoothness=smoothness_cost(traj, params.w_s),
        nullspace=nullspace_cost(traj, params.q_ref, params.w_ns),
        terminal=terminal_cost(ee_final, goal, params.terminal_weight),
    )


def soft_weights(costs: np.ndarray, lam: float) -> np.ndarray:
    """Softmin weights over sample costs, shifted by the batch minimum."""
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        raise ValueError("cost batch is empty")
    if not np.isfinite(costs).all():
        raise ValueError("costs must be finite")
    if lam <= 0.0:
        raise ValueError(f"temperature must be positive, got {lam}")
    shifted = costs - costs.min()
    w = np.exp(-shifted / lam)
    return w / w.sum()


def update_controls(
    nominal: np.ndarray, perturbations: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Weighted average of the sampled sequences: nominal + sum_m w_m eps_m."""
    weights = np.asarray(weights, dtype=float)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise WeightMismatch(f"weights sum to {weights.sum()!r}, expected 1")
    if weights.shape[0] != perturbations.shape[0]:
        raise WeightMismatch(
            f"{weights.shape[0]} weights for {perturbations.shape[0]} samples"
        )
    return np.asarray(nominal, dtype=float) + np.einsum(
        "m,mhn->hn", weights, perturbations
    )


def check_convergence(
    costs,
    pos_errors,
    criteria: ConvergenceCriteria,
    ori_errors=None,
) -> bool:
    """True when the last stable_cycles cycles all hold the pose error under
    tolerance while the objective has stopped improving cycle over cycle."""
    costs = np.asarray(costs, dtype=float)
    pos_errors = np.asarray(pos_errors, dtype=float)
    n = criteria.stable_cycles
    if costs.shape[0] < n or costs.shape[0] != pos_errors.shape[0]:
        return False
    if (pos_errors[-n:] >= criteria.pos_tol).any():
        return False
    if criteria.ori_tol is not None:
        if ori_errors is None:
            raise ValueError("ori_tol set but no orientation errors supplied")
        if (np.asarray(ori_errors, dtype=float)[-n:] >= criteria.ori_tol).any():
            return False
    recent = costs[-n:]
    prev = recent[:-1]
    improvement = (prev - recent[1:]) / np.maximum(np.abs(prev), 1e-12)
    return bool((improvement < criteria.rel_improvement).all())


def _field_arguments(snap):
    if snap is None:
        # Degenerate far-away field: every query lands outside and reports
        # an infinite distance, disabling the environment term.
        return (
            np.full((1, 1, 1), np.inf),
            int(2**40),
            int(2**40),
            int(2**40),
            0.0,
            0.0,
            0.0,
            1.0,
            np.inf,
        )
    field = snap.field if isinstance(snap, MapSnapshot) else snap
    return (
        field.sq,
        field.volume.lo[0],
        field.volume.lo[1],
        field.volume.lo[2],
        field.origin[0],
        field.origin[1],
        field.origin[2],
        field.voxel_size,
        field.outside_default,
    )


class Planner:
    """One manipulator's sampling MPC: immutable model, reusable across cycles."""

    def __init__(
        self, chain: KinematicChain, model: SphereModel, params: PlannerParams
    ):
        if params.dof != chain.dof:
            raise DimensionMismatch(
                f"params are for {params.dof} joints, chain has {chain.dof}"
            )
        model.validate_links(chain)
        self.chain = chain
        self.model = model
        self.params = params
        self._base_r = np.ascontiguousarray(chain.base_pose.rotation.matrix)
        self._base_t = np.ascontiguousarray(chain.base_pose.translation)
        n = chain.dof
        self._off_r = np.empty((n, 3, 3))
        self._off_t = np.empty((n, 3))
        self._axes = np.empty((n, 3))
        for i, joint in enumerate(chain.joints):
            self._off_r[i] = joint.parent_offset.rotation.matrix
            self._off_t[i] = joint.parent_offset.translation
            self._axes[i] = joint.axis
        self._sph_link = np.array([s.link for s in model.spheres], dtype=np.int64)
        self._sph_loc = np.array([s.center for s in model.spheres], dtype=float)
        self._sph_r = model.radii()
        pairs = model.self_pairs or ()
        self._pairs = (
            np.array(pairs, dtype=np.int64).reshape(-1, 2)
            if pairs
            else np.zeros((0, 2), dtype=np.int64)
        )
        (
            self._pos_lo,
            self._pos_hi,
            self._vel_lo,
            self._vel_hi,
            self._acc_lo,
            self._acc_hi,
        ) = tightened_limits(chain, params.margin_frac)
        self._acc_limits = chain.acceleration_limits()

    def zero_nominal(self) -> np.ndarray:
        return np.zeros((self.params.horizon, self.chain.dof))

    def evaluate(
        self,
        state: JointState,
        goal: RigidTransform,
        snap,
        controls: np.ndarray,
        perturbations: np.ndarray | None = None,
        keep_trajectories: bool = False,
        keep_spheres: bool = False,
    ) -> RolloutBatch:
        """Score a batch of control sequences against one map snapshot."""
        controls = np.ascontiguousarray(controls, dtype=float)
        m_count, h, n = controls.shape
        if n != self.chain.dof:
            raise DimensionMismatch(
                f"controls carry {n} joints, chain has {self.chain.dof}"
            )
        if not np.isfinite(controls).all():
            raise ValueError("control sequences must be finite")
        costs = np.zeros(m_count)
        terms = np.zeros((m_count, 6))
        flags = np.zeros(m_count, dtype=np.uint8)
        shape_tq = (m_count, h + 1, n) if keep_trajectories else (1, 1, 1)
        traj_q = np.zeros(shape_tq)
        traj_qd = np.zeros(shape_tq)
        shape_sp = (
            (m_count, h, self.model.count, 3) if keep_spheres else (1, 1, 1, 3)
        )
        sphere_pos = np.zeros(shape_sp)
        field_args = _field_arguments(snap)
        _batch.evaluate_batch(
            np.ascontiguousarray(state.q, dtype=float),
            np.ascontiguousarray(state.qd, dtype=float),
            controls,
            self.params.dt,
            self._base_r,
            self._base_t,
            self._off_r,
            self._off_t,
            self._axes,
            self._sph_link,
            self._sph_loc,
            self._sph_r,
            self._pairs,
            np.ascontiguousarray(goal.rotation.matrix),
            np.ascontiguousarray(goal.translation),
            self.params.pose_weight,
            self.params.terminal_weight,
            self._pos_lo,
            self._pos_hi,
            self._vel_lo,
            self._vel_hi,
            self._acc_lo,
            self._acc_hi,
            self.params.w_env,
            self.params.w_self,
            self.params.w_q,
            self.params.w_qd,
            self.params.w_qdd,
            self.params.w_s,
            self.params.w_ns,
            self.params.d_act,
            self.params.q_ref,
            *field_args,
            keep_trajectories,
            keep_spheres,
            costs,
            terms,
            traj_q,
            traj_qd,
            sphere_pos,
            flags,
        )
        if flags.any():
            bad = int(np.nonzero(flags)[0][0])
            raise DegenerateRotation(
                f"sample {bad} reached a pose error with rotation angle at pi"
            )
        if perturbations is None:
            perturbations = np.zeros_like(controls)
        return RolloutBatch(
            controls=controls,
            perturbations=perturbations,
            costs=costs,
            terms=terms,
            traj_q=traj_q if keep_trajectories else None,
            traj_qd=traj_qd if keep_trajectories else None,
            sphere_positions=sphere_pos if keep_spheres else None,
        )

    def smpc_step(
        self,
        state: JointState,
        goal: RigidTransform,
        snap,
        nominal: np.ndarray | None,
        rng_seed: int,
    ) -> StepResult:
        """One full cycle: sample, roll out, weight, update, shift.

        Returns the clamped first action, the shifted warm-start sequence,
        and diagnostics for the weighted solution.
        """
        params = self.params
        if nominal is None:
            nominal = self.zero_nominal()
        nominal = np.asarray(nominal, dtype=float)
        eps = sample_perturbations(params, rng_seed)
        controls = nominal[None, :, :] + eps
        result = self.evaluate(state, goal, snap, controls, perturbations=eps)
        weights = soft_weights(result.costs, params.lam)
        optimal = update_controls(nominal, eps, weights)
        weighted = self.evaluate(state, goal, snap, optimal[None, :, :])
        breakdown = CostBreakdown(*weighted.terms[0])
        command = np.clip(optimal[0], -self._acc_limits, self._acc_limits)
        next_nominal = np.vstack([optimal[1:], np.zeros((1, self.chain.dof))])
        ee = forward_kinematics(self.chain, state.q)[-1]
        diagnostics = StepDiagnostics(
            best_cost=float(result.costs.min()),
            weighted_cost=float(weighted.costs[0]),
            breakdown=breakdown,
            e_pos=float(np.linalg.norm(ee.translation - goal.translation)),
            e_ori=quaternion_angle(
                ee.rotation.to_quaternion(), goal.rotation.to_quaternion()
            ),
        )
        return StepResult(command=command, next_nominal=next_nominal, diagnostics=diagnostics)

    def integrate(self, state: JointState, command: np.ndarray) -> JointState:
        """Advance the executed state one cycle under the commanded acceleration."""
        qd = state.qd + command * self.params.dt
        q = state.q + qd * self.params.dt
        return JointState(q, qd, command.copy())
