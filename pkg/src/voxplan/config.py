"""Configuration loading: planner defaults, robot files, scenario files."""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from voxplan.planner import ConvergenceCriteria, PlannerParams

_PLANNER_KEYS = {
    "horizon",
    "samples",
    "dt",
    "lam",
    "sigma",
    "noise_window",
    "pose_weight",
    "pose_weight_diag",
    "terminal_weight",
    "terminal_weight_diag",
    "w_env",
    "w_self",
    "w_q",
    "w_qd",
    "w_qdd",
    "w_s",
    "w_ns",
    "d_act",
    "margin_frac",
    "q_ref",
}


def load_planner_defaults() -> dict:
    text = (resources.files("voxplan.data") / "planner_defaults.yaml").read_text(
        encoding="utf-8"
    )
    return yaml.safe_load(text)


def _weight_matrix(doc: dict, key: str) -> np.ndarray:
    full = doc.get(key)
    if full is not None:
        return np.asarray(full, dtype=float)
    return np.diag(np.asarray(doc[f"{key}_diag"], dtype=float))


def planner_params(dof: int, overrides: dict | None = None) -> PlannerParams:
    """Planner parameters from the packaged defaults plus scenario overrides."""
    doc = load_planner_defaults()
    overrides = overrides or {}
    unknown = set(overrides) - _PLANNER_KEYS
    if unknown:
        raise ValueError(f"unknown planner keys: {sorted(unknown)}")
    doc.update(overrides)
    q_ref = np.asarray(doc.get("q_ref", np.zeros(dof)), dtype=float)
    if q_ref.shape != (dof,):
        raise ValueError(f"q_ref must have {dof} entries, got {q_ref.shape}")
    return PlannerParams(
        horizon=int(doc["horizon"]),
        samples=int(doc["samples"]),
        dt=float(doc["dt"]),
        lam=float(doc["lam"]),
        sigma=np.asarray(doc["sigma"], dtype=float),
        noise_window=int(doc["noise_window"]),
        pose_weight=_weight_matrix(doc, "pose_weight"),
        terminal_weight=_weight_matrix(doc, "terminal_weight"),
        w_env=float(doc["w_env"]),
        w_self=float(doc["w_self"]),
        w_q=float(doc["w_q"]),
        w_qd=float(doc["w_qd"]),
        w_qdd=float(doc["w_qdd"]),
        w_s=float(doc["w_s"]),
        w_ns=float(doc["w_ns"]),
        d_act=float(doc["d_act"]),
        margin_frac=float(doc["margin_frac"]),
        q_ref=q_ref,
    )


def convergence_criteria(doc: dict | None) -> ConvergenceCriteria:
    doc = doc or {}
    return ConvergenceCriteria(
        pos_tol=float(doc.get("pos_tol", 0.010)),
        ori_tol=(None if doc.get("ori_tol") is None else float(doc["ori_tol"])),
        rel_improvement=float(doc.get("rel_improvement", 1e-3)),
        stable_cycles=int(doc.get("stable_cycles", 5)),
    )


def config_hash(doc: dict) -> str:
    """Stable short hash of a configuration mapping, for output headers."""
    canonical = json.dumps(doc, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped inside the package (no .yaml suffix needed)."""
    if not name.endswith(".yaml"):
        name = f"{name}.yaml"
    path = resources.files("voxplan.data") / name
    with resources.as_file(path) as concrete:
        return Path(concrete)


SCENARIO_SCHEMA_VERSION = 1


def _camera_from_dict(doc: dict):
    from voxplan.geometry import RigidTransform
    from voxplan.mapping import CameraModel
    from voxplan.sim import camera_look_at

    if "pose" in doc:
        pose = RigidTransform.from_vec7(doc["pose"])
    elif "position" in doc and "target" in doc:
        pose = camera_look_at(doc["position"], doc["target"], doc.get("up", (0, 0, 1)))
    else:
        raise ValueError("camera needs either pose or position+target")
    return CameraModel(
        fx=float(doc["fx"]),
        fy=float(doc["fy"]),
        cx=float(doc["cx"]),
        cy=float(doc["cy"]),
        width=int(doc["width"]),
        height=int(doc["height"]),
        d_min=float(doc["d_min"]),
        d_max=float(doc["d_max"]),
        pose=pose,
    )


def _obstacle_from_dict(doc: dict, index: int):
    from voxplan.geometry import RigidTransform
    from voxplan.sim import BoxShape, MotionScript, Obstacle, SphereShape

    kind = doc.get("type")
    if kind == "box":
        shape = BoxShape(tuple(doc["size"]))
    elif kind == "sphere":
        shape = SphereShape(float(doc["radius"]))
    else:
        raise ValueError(f"obstacle {index}: unknown type {kind!r}")
    waypoints = doc.get("script")
    if not waypoints:
        raise ValueError(f"obstacle {index}: script must have at least one waypoint")
    times = tuple(float(w["t"]) for w in waypoints)
    poses = tuple(RigidTransform.from_vec7(w["pose"]) for w in waypoints)
    return Obstacle(
        shape=shape,
        script=MotionScript(times, poses),
        name=doc.get("name", f"obstacle_{index}"),
    )


def load_scenario(path, seed_override: int | None = None):
    """Parse a scenario YAML file into a fully constructed Scenario.

    Raises ValueError with field context on malformed input. The planner dt
    is pinned to the replanning period 1/rate_hz.
    """
    from voxplan.geometry import RigidTransform
    from voxplan.mapping import VoxelBox
    from voxplan.robot import load_robot, robot_from_dict
    from voxplan.sim import GridSpec, Scenario

    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    version = doc.get("schema_version")
    if version != SCENARIO_SCHEMA_VERSION:
        raise ValueError(
            f"{path}: unsupported scenario schema_version {version!r}, "
            f"expected {SCENARIO_SCHEMA_VERSION}"
        )

    robot_ref = doc.get("robot")
    if robot_ref is None:
        raise ValueError(f"{path}: missing robot reference")
    if isinstance(robot_ref, dict):
        chain, model = robot_from_dict(robot_ref)
    else:
        robot_path = Path(robot_ref)
        if not robot_path.suffix:
            robot_path = bundled_scenario_path(str(robot_ref))
        elif not robot_path.is_absolute():
            robot_path = path.parent / robot_path
        if not robot_path.exists():
            raise ValueError(f"{path}: robot file {robot_path} does not exist")
        chain, model = load_robot(robot_path)

    try:
        start_q = np.asarray(doc["start_q"], dtype=float)
        goals = tuple(RigidTransform.from_vec7(g) for g in doc["goals"])
        grid_doc = doc["grid"]
        grid_spec = GridSpec(
            origin=tuple(float(v) for v in grid_doc["origin"]),
            voxel_size=float(grid_doc["voxel_size"]),
            dims=tuple(int(v) for v in grid_doc["dims"]),
        )
        cam = _camera_from_dict(doc["camera"])
        rate_hz = float(doc.get("rate_hz", 50.0))
    except KeyError as exc:
        raise ValueError(f"{path}: missing required field {exc}") from exc
    if start_q.shape != (chain.dof,):
        raise ValueError(
            f"{path}: start_q has {start_q.shape[0]} entries, robot has {chain.dof} joints"
        )
    if not goals:
        raise ValueError(f"{path}: needs at least one goal")

    vol_doc = doc.get("local_volume")
    if vol_doc is None:
        local_volume = VoxelBox((0, 0, 0), grid_spec.dims)
    else:
        local_volume = VoxelBox(tuple(vol_doc["lo"]), tuple(vol_doc["hi"]))

    overrides = dict(doc.get("planner", {}))
    overrides["dt"] = 1.0 / rate_hz
    params = planner_params(chain.dof, overrides)

    seed = int(doc.get("seed", 0)) if seed_override is None else int(seed_override)
    obstacles = tuple(
        _obstacle_from_dict(o, i) for i, o in enumerate(doc.get("obstacles", []))
    )
    digest_doc = dict(doc)
    digest_doc["seed"] = seed
    return Scenario(
        name=doc.get("name", path.stem),
        chain=chain,
        model=model,
        start_q=start_q,
        goals=goals,
        obstacles=obstacles,
        cam=cam,
        grid_spec=grid_spec,
        local_volume=local_volume,
        planner_params=params,
        criteria=convergence_criteria(doc.get("convergence")),
        rate_hz=rate_hz,
        seed=seed,
        timeout_cycles=int(doc.get("timeout_cycles", 1000)),
        render_robot_mask=bool(doc.get("render_robot_mask", False)),
        depth_noise_std=float(doc.get("depth_noise_std", 0.0)),
        config_digest=config_hash(digest_doc),
        raw_config=doc,
    )
