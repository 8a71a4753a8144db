"""Deterministic closed-loop simulation: scripted world, synthetic depth,
fixed-rate replanning executive, and the evaluation metric suite.

The world is a list of primitives (boxes, spheres), each following a
piecewise-linear pose script. Depth images come from analytic ray-primitive
intersection. Each cycle advances the world, renders, fuses the depth image
with the robot body masked out, recomputes the local distance field,
publishes a snapshot, runs one planning step, and integrates the executed
command. Everything is keyed off the scenario seed; wall-clock time appears
only in timing fields.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field as dataclass_field

import numpy as np

import voxplan
from voxplan.geometry import (
    RigidTransform,
    Rotation3,
    UnitQuaternion,
    quaternion_angle,
)
from voxplan.mapping import (
    CameraModel,
    DepthImage,
    OccupancyMapper,
    VoxelBox,
    VoxelGrid,
    query_distance,
)
from voxplan.planner import (
    ConvergenceCriteria,
    Planner,
    PlannerParams,
    check_convergence,
)
from voxplan.robot import (
    JointState,
    KinematicChain,
    SphereModel,
    forward_kinematics,
    sphere_positions,
)

LOG_SCHEMA_VERSION = 1

# Wall-clock measurements are the only nondeterministic entries in a log.
TIMING_FIELDS = ("map_ms", "plan_ms", "wall_s")
METRIC_TIMING_FIELDS = ("planning_time_ms", "mapping_time_ms")


def strip_timing_fields(doc: dict) -> dict:
    """Copy of a log/metrics record with every wall-clock field removed,
    for determinism comparisons."""
    doc = dict(doc)
    for field in TIMING_FIELDS:
        doc.pop(field, None)
    metrics = doc.get("metrics")
    if isinstance(metrics, dict):
        metrics = dict(metrics)
        for field in METRIC_TIMING_FIELDS:
            metrics.pop(field, None)
        doc["metrics"] = metrics
    return doc


@dataclass(frozen=True)
class BoxShape:
    """Axis-aligned box in its own frame, full extents in meters."""

    size: tuple[float, float, float]

    def __post_init__(self):
        if any(s <= 0.0 for s in self.size):
            raise ValueError(f"box size must be positive, got {self.size}")
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))


@dataclass(frozen=True)
class SphereShape:
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class MotionScript:
    """Time-stamped poses, linearly interpolated and clamped at both ends."""

    times: tuple[float, ...]
    poses: tuple[RigidTransform, ...]

    def __post_init__(self):
        if len(self.times) != len(self.poses) or not self.times:
            raise ValueError("script needs matching, non-empty times and poses")
        diffs = np.diff(self.times)
        if (diffs <= 0.0).any():
            raise ValueError("script timestamps must be strictly increasing")
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "poses", tuple(self.poses))

    @staticmethod
    def fixed(pose: RigidTransform) -> "MotionScript":
        return MotionScript((0.0,), (pose,))

    def pose_at(self, t: float) -> RigidTransform:
        times = self.times
        if t <= times[0] or len(times) == 1:
            return self.poses[0]
        if t >= times[-1]:
            return self.poses[-1]
        hi = int(np.searchsorted(times, t, side="right"))
        lo = hi - 1
        alpha = (t - times[lo]) / (times[hi] - times[lo])
        a, b = self.poses[lo], self.poses[hi]
        translation = (1.0 - alpha) * a.translation + alpha * b.translation
        rotation = _slerp(a.rotation, b.rotation, alpha)
        return RigidTransform(rotation, translation)


def _slerp(a: Rotation3, b: Rotation3, alpha: float) -> Rotation3:
    qa = a.to_quaternion()
    qb = b.to_quaternion()
    va = np.array([qa.w, qa.x, qa.y, qa.z])
    vb = np.array([qb.w, qb.x, qb.y, qb.z])
    if va @ vb < 0.0:
        vb = -vb
    dot = min(1.0, max(-1.0, va @ vb))
    theta = np.arccos(dot)
    if theta < 1e-9:
        v = (1.0 - alpha) * va + alpha * vb
    else:
        v = (
            np.sin((1.0 - alpha) * theta) * va + np.sin(alpha * theta) * vb
        ) / np.sin(theta)
    q = UnitQuaternion(*v)
    return q.to_rotation()


@dataclass(frozen=True)
class Obstacle:
    shape: BoxShape | SphereShape
    script: MotionScript
    name: str = "obstacle"


def advance_world(obstacles, t: float) -> list[RigidTransform]:
    """Pose of every obstacle at time t (clamped to the script span)."""
    return [obs.script.pose_at(t) for obs in obstacles]


def camera_look_at(position, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera-to-world pose with the optical (+z) axis aimed at `target`."""
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position and target coincide")
    forward = forward / norm
    up = np.asarray(up, dtype=float)
    if np.linalg.norm(np.cross(up, forward)) < 1e-9:
        up = np.array([0.0, 1.0, 0.0])
    x_axis = np.cross(up, forward)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(forward, x_axis)
    rot = np.column_stack([x_axis, y_axis, forward])
    return RigidTransform(Rotation3(rot), position)


def _pixel_rays(cam: CameraModel) -> np.ndarray:
    us, vs = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    dirs_cam = np.stack(
        [(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy, np.ones_like(us, dtype=float)],
        axis=-1,
    )
    return dirs_cam @ cam.pose.rotation.matrix.T


def _box_hits(origin_local, dirs_local, half) -> np.ndarray:
    """Smallest positive ray parameter against a centered box, inf on miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - origin_local) / dirs_local
        t2 = (half - origin_local) / dirs_local
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    parallel = dirs_local == 0.0
    inside = np.abs(origin_local) <= half
    near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
    far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
    tmin = near.max(axis=-1)
    tmax = far.min(axis=-1)
    hit = (tmax >= tmin) & (tmax > 0.0)
    t = np.where(tmin > 0.0, tmin, tmax)
    return np.where(hit, t, np.inf)


def _sphere_hits(rel_origin, dirs, radius) -> np.ndarray:
    """Smallest positive ray parameter against a sphere at the origin."""
    a = (dirs * dirs).sum(axis=-1)
    b = 2.0 * (dirs * rel_origin).sum(axis=-1)
    c = (rel_origin * rel_origin).sum() - radius * radius
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    sqrt_disc = np.sqrt(np.where(hit, disc, 0.0))
    t_near = (-b - sqrt_disc) / (2.0 * a)
    t_far = (-b + sqrt_disc) / (2.0 * a)
    t = np.where(t_near > 0.0, t_near, t_far)
    return np.where(hit & (t > 0.0), t, np.inf)


def render_depth(
    obstacles,
    poses,
    cam: CameraModel,
    extra_spheres: tuple[np.ndarray, np.ndarray] | None = None,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> DepthImage:
    """Analytic depth image of the world (plus optional extra spheres).

    Ray parameters equal camera-frame z depth because every pixel ray has
    unit z in the camera frame. Returns 0 where no hit lies in
    [d_min, d_max]. `extra_spheres` renders the robot's own collision model
    into the image to exercise body masking.
    """
    dirs = _pixel_rays(cam)
    cam_pos = cam.pose.translation
    best = np.full((cam.height, cam.width), np.inf)
    for obs, pose in zip(obstacles, poses):
        if isinstance(obs.shape, BoxShape):
            inv = pose.inverse()
            origin_local = inv.apply(cam_pos)
            dirs_local = dirs @ inv.rotation.matrix.T
            half = np.asarray(obs.shape.size) / 2.0
            t = _box_hits(origin_local, dirs_local, half)
        else:
            rel = cam_pos - pose.translation
            t = _sphere_hits(rel, dirs, obs.shape.radius)
        best = np.minimum(best, t)
    if extra_spheres is not None:
        centers, radii = extra_spheres
        for center, radius in zip(centers, radii):
            t = _sphere_hits(cam_pos - center, dirs, float(radius))
            best = np.minimum(best, t)
    if noise_std > 0.0:
        if rng is None:
            raise ValueError("depth noise requested without an rng")
        noisy = best + rng.normal(0.0, noise_std, size=best.shape)
        best = np.where(np.isfinite(best), noisy, best)
    valid = (best >= cam.d_min) & (best <= cam.d_max)
    return DepthImage(np.where(valid, best, 0.0))


def analytic_clearance(obstacles, poses, centers: np.ndarray, radii: np.ndarray) -> float:
    """Exact smallest sphere-to-primitive distance against the true world."""
    best = np.inf
    for obs, pose in zip(obstacles, poses):
        if isinstance(obs.shape, BoxShape):
            inv = pose.inverse()
            half = np.asarray(obs.shape.size) / 2.0
            for center, radius in zip(centers, radii):
                local = inv.apply(center)
                outside = np.maximum(np.abs(local) - half, 0.0)
                dist = float(np.linalg.norm(outside))
                if dist == 0.0:
                    # center inside the box: negative by the deepest face
                    dist = float((np.abs(local) - half).max())
                best = min(best, dist - radius)
        else:
            for center, radius in zip(centers, radii):
                gap = float(np.linalg.norm(center - pose.translation))
                best = min(best, gap - obs.shape.radius - radius)
    return best


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float, float]
    voxel_size: float
    dims: tuple[int, int, int]


@dataclass(frozen=True)
class Scenario:
    """Declarative episode description; see docs/scenario schema in README."""

    name: str
    chain: KinematicChain
    model: SphereModel
    start_q: np.ndarray
    goals: tuple[RigidTransform, ...]
    obstacles: tuple[Obstacle, ...]
    cam: CameraModel
    grid_spec: GridSpec
    local_volume: VoxelBox
    planner_params: PlannerParams
    criteria: ConvergenceCriteria
    rate_hz: float
    seed: int
    timeout_cycles: int
    render_robot_mask: bool = False
    depth_noise_std: float = 0.0
    config_digest: str = ""
    raw_config: dict = dataclass_field(default_factory=dict, repr=False)

    def make_grid(self) -> VoxelGrid:
        return VoxelGrid(self.grid_spec.origin, self.grid_spec.voxel_size, self.grid_spec.dims)


@dataclass
class CycleRecord:
    cycle: int
    t: float
    goal_index: int
    q: np.ndarray
    qd: np.ndarray
    command: np.ndarray
    ee_pose: np.ndarray  # [tx, ty, tz, qw, qx, qy, qz]
    costs: dict
    weighted_cost: float
    best_cost: float
    e_pos: float
    e_ori: float
    clearance: float
    true_clearance: float
    map_ms: float
    plan_ms: float

    def to_json_dict(self) -> dict:
        return {
            "record": "cycle",
            "cycle": self.cycle,
            "t": self.t,
            "goal_index": self.goal_index,
            "q": list(self.q),
            "qd": list(self.qd),
            "command": list(self.command),
            "ee_pose": list(self.ee_pose),
            "costs": self.costs,
            "weighted_cost": self.weighted_cost,
            "best_cost": self.best_cost,
            "e_pos": self.e_pos,
            "e_ori": self.e_ori,
            "clearance": self.clearance,
            "true_clearance": self.true_clearance,
            "map_ms": self.map_ms,
            "plan_ms": self.plan_ms,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "CycleRecord":
        return CycleRecord(
            cycle=doc["cycle"],
            t=doc["t"],
            goal_index=doc["goal_index"],
            q=np.asarray(doc["q"], dtype=float),
            qd=np.asarray(doc["qd"], dtype=float),
            command=np.asarray(doc["command"], dtype=float),
            ee_pose=np.asarray(doc["ee_pose"], dtype=float),
            costs=doc["costs"],
            weighted_cost=doc["weighted_cost"],
            best_cost=doc["best_cost"],
            e_pos=doc["e_pos"],
            e_ori=doc["e_ori"],
            clearance=doc["clearance"],
            true_clearance=doc["true_clearance"],
            map_ms=doc["map_ms"],
            plan_ms=doc["plan_ms"],
        )


@dataclass(frozen=True)
class Metrics:
    planning_time_ms: float
    mapping_time_ms: float
    motion_time_s: float
    path_length_rad: float
    e_pos_mm: float
    e_ori_rad: float
    min_clearance_m: float
    success: bool

    def as_dict(self) -> dict:
        return {
            "planning_time_ms": self.planning_time_ms,
            "mapping_time_ms": self.mapping_time_ms,
            "motion_time_s": self.motion_time_s,
            "path_length_rad": self.path_length_rad,
            "e_pos_mm": self.e_pos_mm,
            "e_ori_rad": self.e_ori_rad,
            "min_clearance_m": self.min_clearance_m,
            "success": self.success,
        }


@dataclass
class EpisodeLog:
    scenario_name: str
    seed: int
    config_hash: str
    dt: float
    records: list[CycleRecord]
    goal_cycles: list[int]
    success: bool
    timeout: bool
    metrics: Metrics | None = None


def _cycle_seed(seed: int, cycle: int) -> int:
    return (seed * 1_000_003 + cycle) & 0x7FFFFFFFFFFFFFFF


def run_episode(scenario: Scenario, on_cycle=None) -> EpisodeLog:
    """Execute one scenario to convergence on its last goal or to timeout.

    `on_cycle(cycle, mapper, state)` is an optional inspection hook invoked
    after each cycle's map update and executed step; it must not mutate its
    arguments.
    """
    chain = scenario.chain
    model = scenario.model
    params = scenario.planner_params
    dt = 1.0 / scenario.rate_hz
    grid = scenario.make_grid()
    outside_default = params.d_act + model.max_radius() + grid.voxel_size
    mapper = OccupancyMapper(
        grid,
        scenario.cam,
        scenario.local_volume,
        outside_default=outside_default,
        mask_pad=max(0.01, 3.0 * scenario.depth_noise_std),
    )
    planner = Planner(chain, model, params)
    state = JointState.resting(scenario.start_q)
    nominal = None
    noise_rng = (
        np.random.Generator(
            np.random.Philox(
                key=np.array(
                    [scenario.seed & 0xFFFFFFFFFFFFFFFF, 0xD1F7], dtype=np.uint64
                )
            )
        )
        if scenario.depth_noise_std > 0.0
        else None
    )
    radii = model.radii()
    records: list[CycleRecord] = []
    goal_cycles: list[int] = []
    goal_index = 0
    hist_costs: list[float] = []
    hist_pos: list[float] = []
    hist_ori: list[float] = []
    success = False

    for cycle in range(scenario.timeout_cycles):
        t = cycle * dt
        poses = advance_world(scenario.obstacles, t)
        mask = sphere_positions(chain, state.q, model)
        extra = mask if scenario.render_robot_mask else None
        depth = render_depth(
            scenario.obstacles,
            poses,
            scenario.cam,
            extra_spheres=extra,
            noise_std=scenario.depth_noise_std,
            rng=noise_rng,
        )
        map_start = time.perf_counter()
        mapper.update(depth, mask=mask)
        mapper.recompute_edt()
        snap = mapper.snapshot()
        map_ms = (time.perf_counter() - map_start) * 1000.0

        goal = scenario.goals[goal_index]
        plan_start = time.perf_counter()
        result = planner.smpc_step(state, goal, snap, nominal, _cycle_seed(scenario.seed, cycle))
        plan_ms = (time.perf_counter() - plan_start) * 1000.0

        state = planner.integrate(state, result.command)
        nominal = result.next_nominal

        centers, _ = sphere_positions(chain, state.q, model)
        clearance = min(
            query_distance(snap.field, centers[s]) - radii[s] for s in range(len(radii))
        )
        true_clearance = analytic_clearance(scenario.obstacles, poses, centers, radii)
        ee = forward_kinematics(chain, state.q)[-1]
        e_pos = float(np.linalg.norm(ee.translation - goal.translation))
        e_ori = quaternion_angle(
            ee.rotation.to_quaternion(), goal.rotation.to_quaternion()
        )

        hist_costs.append(result.diagnostics.weighted_cost)
        hist_pos.append(e_pos)
        hist_ori.append(e_ori)
        records.append(
            CycleRecord(
                cycle=cycle,
                t=t,
                goal_index=goal_index,
                q=state.q.copy(),
                qd=state.qd.copy(),
                command=result.command.copy(),
                ee_pose=ee.to_vec7(),
                costs=result.diagnostics.breakdown.as_dict(),
                weighted_cost=result.diagnostics.weighted_cost,
                best_cost=result.diagnostics.best_cost,
                e_pos=e_pos,
                e_ori=e_ori,
                clearance=float(clearance),
                true_clearance=float(true_clearance),
                map_ms=map_ms,
                plan_ms=plan_ms,
            )
        )
        if on_cycle is not None:
            on_cycle(cycle, mapper, state)
        if check_convergence(hist_costs, hist_pos, scenario.criteria, hist_ori):
            goal_cycles.append(cycle)
            goal_index += 1
            hist_costs.clear()
            hist_pos.clear()
            hist_ori.clear()
            if goal_index == len(scenario.goals):
                success = True
                break

    log = EpisodeLog(
        scenario_name=scenario.name,
        seed=scenario.seed,
        config_hash=scenario.config_digest,
        dt=dt,
        records=records,
        goal_cycles=goal_cycles,
        success=success,
        timeout=not success,
    )
    log.metrics = compute_metrics(log, scenario.goals[-1])
    return log


def compute_metrics(log: EpisodeLog, goal: RigidTransform) -> Metrics:
    """Aggregate metrics for one episode against its final goal pose.

    Path length sums joint angular displacements up to the convergence point
    (or the whole log on timeout); motion time is cycles-to-convergence times
    the cycle period.
    """
    if not log.records:
        return Metrics(0.0, 0.0, 0.0, 0.0, float("nan"), float("nan"), float("inf"), False)
    end = log.goal_cycles[-1] if log.success else log.records[-1].cycle
    upto = [r for r in log.records if r.cycle <= end]
    q_rows = np.array([r.q for r in upto])
    path = float(np.abs(np.diff(q_rows, axis=0)).sum()) if len(upto) > 1 else 0.0
    final = upto[-1]
    p_final = final.ee_pose[:3]
    q_final = UnitQuaternion(*final.ee_pose[3:])
    e_pos = float(np.linalg.norm(goal.translation - p_final))
    e_ori = quaternion_angle(goal.rotation.to_quaternion(), q_final)
    motion_time = (end + 1) * log.dt if log.success else len(log.records) * log.dt
    return Metrics(
        planning_time_ms=float(np.mean([r.plan_ms for r in log.records])),
        mapping_time_ms=float(np.mean([r.map_ms for r in log.records])),
        motion_time_s=motion_time,
        path_length_rad=path,
        e_pos_mm=e_pos * 1000.0,
        e_ori_rad=e_ori,
        min_clearance_m=float(min(r.clearance for r in log.records)),
        success=log.success,
    )


def write_episode_log(log: EpisodeLog, path) -> None:
    """Newline-delimited JSON: header record, cycle records, metrics record."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "record": "header",
            "schema_version": LOG_SCHEMA_VERSION,
            "version": voxplan.__version__,
            "scenario": log.scenario_name,
            "seed": log.seed,
            "config_hash": log.config_hash,
            "dt": log.dt,
        }
        fh.write(json.dumps(header) + "\n")
        for record in log.records:
            fh.write(json.dumps(record.to_json_dict()) + "\n")
        footer = {
            "record": "metrics",
            "goal_cycles": log.goal_cycles,
            "success": log.success,
            "timeout": log.timeout,
            "metrics": log.metrics.as_dict() if log.metrics else None,
        }
        fh.write(json.dumps(footer) + "\n")


def read_episode_log(path) -> EpisodeLog:
    header = None
    footer = None
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            kind = doc.get("record")
            if kind == "header":
                if doc.get("schema_version") != LOG_SCHEMA_VERSION:
                    raise ValueError(
                        f"unsupported log schema_version {doc.get('schema_version')!r}"
                    )
                header = doc
            elif kind == "cycle":
                records.append(CycleRecord.from_json_dict(doc))
            elif kind == "metrics":
                footer = doc
    if header is None or footer is None:
        raise ValueError(f"log {path} is missing its header or metrics record")
    m = footer.get("metrics")
    metrics = Metrics(**m) if m else None
    return EpisodeLog(
        scenario_name=header["scenario"],
        seed=header["seed"],
        config_hash=header["config_hash"],
        dt=header["dt"],
        records=records,
        goal_cycles=list(footer["goal_cycles"]),
        success=footer["success"],
        timeout=footer["timeout"],
        metrics=metrics,
    )
