"""Shared fixtures: a miniature scenario that runs an episode in well under
a second, used by the sim and CLI tests."""

import numpy as np
import pytest
import yaml

from voxplan.robot import forward_kinematics, robot_from_dict

MINI_ROBOT = {
    "schema_version": 1,
    "name": "mini_3dof",
    "base_pose": [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    "joints": [
        {
            "offset": [0.0, 0.0, 0.15, 1.0, 0.0, 0.0, 0.0],
            "axis": [0.0, 0.0, 1.0],
            "position_limits": [-2.9, 2.9],
            "velocity_limit": 2.5,
            "acceleration_limit": 10.0,
        },
        {
            "offset": [0.0, 0.0, 0.15, 1.0, 0.0, 0.0, 0.0],
            "axis": [0.0, 1.0, 0.0],
            "position_limits": [-2.0, 2.0],
            "velocity_limit": 2.5,
            "acceleration_limit": 10.0,
        },
        {
            "offset": [0.0, 0.0, 0.25, 1.0, 0.0, 0.0, 0.0],
            "axis": [0.0, 1.0, 0.0],
            "position_limits": [-2.0, 2.0],
            "velocity_limit": 2.5,
            "acceleration_limit": 10.0,
        },
    ],
    "spheres": [
        {"link": 1, "center": [0.0, 0.0, 0.05], "radius": 0.06},
        {"link": 2, "center": [0.0, 0.0, 0.12], "radius": 0.06},
        {"link": 3, "center": [0.0, 0.0, 0.0], "radius": 0.05},
    ],
    "self_pairs": [[0, 2]],
}

MINI_START = [0.0, 0.5, 0.4]
MINI_GOAL_Q = [0.25, 0.6, 0.2]


def mini_scenario_dict(seed=0, timeout=250):
    chain, _ = robot_from_dict(MINI_ROBOT)
    goal = forward_kinematics(chain, np.array(MINI_GOAL_Q))[-1].to_vec7()
    return {
        "schema_version": 1,
        "name": "mini_reach",
        "robot": MINI_ROBOT,
        "seed": seed,
        "rate_hz": 50.0,
        "timeout_cycles": timeout,
        "start_q": MINI_START,
        "goals": [[float(v) for v in goal]],
        "grid": {
            "origin": [-0.5, -0.5, 0.0],
            "voxel_size": 0.05,
            "dims": [20, 20, 14],
        },
        "camera": {
            "fx": 40.0,
            "fy": 40.0,
            "cx": 23.5,
            "cy": 17.5,
            "width": 48,
            "height": 36,
            "d_min": 0.1,
            "d_max": 5.0,
            "position": [1.2, 0.0, 0.9],
            "target": [0.0, 0.0, 0.35],
        },
        "obstacles": [
            {
                "type": "box",
                "name": "side_block",
                "size": [0.1, 0.1, 0.1],
                "script": [{"t": 0.0, "pose": [0.3, 0.3, 0.3, 1.0, 0.0, 0.0, 0.0]}],
            }
        ],
        "planner": {"samples": 48, "horizon": 10, "sigma": 1.0},
        "convergence": {
            "pos_tol": 0.012,
            "ori_tol": None,
            "rel_improvement": 1.0e-3,
            "stable_cycles": 5,
        },
        "render_robot_mask": True,
        "depth_noise_std": 0.0,
    }


@pytest.fixture
def mini_scenario_file(tmp_path):
    path = tmp_path / "mini_reach.yaml"
    path.write_text(yaml.safe_dump(mini_scenario_dict()), encoding="utf-8")
    return path
