"""Batched rollout and cost evaluation kernel for the sampling planner.

Each candidate control sequence is rolled out, posed through the kinematic
chain, and scored independently of every other sample, so samples map 1:1
onto parallel loop iterations and outputs are bit-identical for any worker
count. Geometry here mirrors voxplan.geometry in scalar numba form; the test
suite pins the two paths against each other.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from voxplan.mapping import _query_metric

# Same switch points as voxplan.geometry.
_SMALL_ANGLE = 1e-6
_PI_MARGIN = 1e-6
_V_INV_SERIES_ANGLE = 0.1


@njit(cache=True)
def _fk_frames(base_r, base_t, off_r, off_t, axes, q, frames_r, frames_t):
    """Chain frames for one configuration; frame 0 is the base."""
    n = q.shape[0]
    for a in range(3):
        frames_t[0, a] = base_t[a]
        for b in range(3):
            frames_r[0, a, b] = base_r[a, b]
    for i in range(n):
        # Rodrigues rotation about the joint axis.
        ux = axes[i, 0]
        uy = axes[i, 1]
        uz = axes[i, 2]
        c = math.cos(q[i])
        s = math.sin(q[i])
        ic = 1.0 - c
        j00 = c + ux * ux * ic
        j01 = ux * uy * ic - uz * s
        j02 = ux * uz * ic + uy * s
        j10 = uy * ux * ic + uz * s
        j11 = c + uy * uy * ic
        j12 = uy * uz * ic - ux * s
        j20 = uz * ux * ic - uy * s
        j21 = uz * uy * ic + ux * s
        j22 = c + uz * uz * ic
        for a in range(3):
            pr0 = frames_r[i, a, 0]
            pr1 = frames_r[i, a, 1]
            pr2 = frames_r[i, a, 2]
            # parent frame times fixed offset rotation
            m0 = pr0 * off_r[i, 0, 0] + pr1 * off_r[i, 1, 0] + pr2 * off_r[i, 2, 0]
            m1 = pr0 * off_r[i, 0, 1] + pr1 * off_r[i, 1, 1] + pr2 * off_r[i, 2, 1]
            m2 = pr0 * off_r[i, 0, 2] + pr1 * off_r[i, 1, 2] + pr2 * off_r[i, 2, 2]
            frames_r[i + 1, a, 0] = m0 * j00 + m1 * j10 + m2 * j20
            frames_r[i + 1, a, 1] = m0 * j01 + m1 * j11 + m2 * j21
            frames_r[i + 1, a, 2] = m0 * j02 + m1 * j12 + m2 * j22
            frames_t[i + 1, a] = (
                frames_t[i, a]
                + pr0 * off_t[i, 0]
                + pr1 * off_t[i, 1]
                + pr2 * off_t[i, 2]
            )


@njit(cache=True)
def _pose_error(ee_r, ee_t, goal_r, goal_t, xi):
    """Twist [v, omega] of the end effector relative to the goal frame.

    Returns False when the relative rotation angle is within _PI_MARGIN of
    pi (logarithm not unique).
    """
    # dR = goal_r^T ee_r, dt = goal_r^T (ee_t - goal_t)
    d00 = goal_r[0, 0] * ee_r[0, 0] + goal_r[1, 0] * ee_r[1, 0] + goal_r[2, 0] * ee_r[2, 0]
    d01 = goal_r[0, 0] * ee_r[0, 1] + goal_r[1, 0] * ee_r[1, 1] + goal_r[2, 0] * ee_r[2, 1]
    d02 = goal_r[0, 0] * ee_r[0, 2] + goal_r[1, 0] * ee_r[1, 2] + goal_r[2, 0] * ee_r[2, 2]
    d10 = goal_r[0, 1] * ee_r[0, 0] + goal_r[1, 1] * ee_r[1, 0] + goal_r[2, 1] * ee_r[2, 0]
    d11 = goal_r[0, 1] * ee_r[0, 1] + goal_r[1, 1] * ee_r[1, 1] + goal_r[2, 1] * ee_r[2, 1]
    d12 = goal_r[0, 1] * ee_r[0, 2] + goal_r[1, 1] * ee_r[1, 2] + goal_r[2, 1] * ee_r[2, 2]
    d20 = goal_r[0, 2] * ee_r[0, 0] + goal_r[1, 2] * ee_r[1, 0] + goal_r[2, 2] * ee_r[2, 0]
    d21 = goal_r[0, 2] * ee_r[0, 1] + goal_r[1, 2] * ee_r[1, 1] + goal_r[2, 2] * ee_r[2, 1]
    d22 = goal_r[0, 2] * ee_r[0, 2] + goal_r[1, 2] * ee_r[1, 2] + goal_r[2, 2] * ee_r[2, 2]
    rx = ee_t[0] - goal_t[0]
    ry = ee_t[1] - goal_t[1]
    rz = ee_t[2] - goal_t[2]
    tx = goal_r[0, 0] * rx + goal_r[1, 0] * ry + goal_r[2, 0] * rz
    ty = goal_r[0, 1] * rx + goal_r[1, 1] * ry + goal_r[2, 1] * rz
    tz = goal_r[0, 2] * rx + goal_r[1, 2] * ry + goal_r[2, 2] * rz

    c = 0.5 * (d00 + d11 + d22 - 1.0)
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    theta = math.acos(c)
    if theta >= math.pi - _PI_MARGIN:
        return False
    sx = 0.5 * (d21 - d12)
    sy = 0.5 * (d02 - d20)
    sz = 0.5 * (d10 - d01)
    if theta < _SMALL_ANGLE:
        scale = 1.0 + theta * theta / 6.0
    else:
        scale = theta / math.sin(theta)
    wx = scale * sx
    wy = scale * sy
    wz = scale * sz
    if theta < _V_INV_SERIES_ANGLE:
        t2 = theta * theta
        e = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        e = (1.0 - 0.5 * theta * math.sin(theta) / (1.0 - math.cos(theta))) / (
            theta * theta
        )
    # V^-1 = I - 0.5 [w]x + e [w]x^2
    wxx = wx * wx
    wyy = wy * wy
    wzz = wz * wz
    m00 = 1.0 + e * (-wzz - wyy)
    m01 = 0.5 * wz + e * wx * wy
    m02 = -0.5 * wy + e * wx * wz
    m10 = -0.5 * wz + e * wx * wy
    m11 = 1.0 + e * (-wxx - wzz)
    m12 = 0.5 * wx + e * wy * wz
    m20 = 0.5 * wy + e * wx * wz
    m21 = -0.5 * wx + e * wy * wz
    m22 = 1.0 + e * (-wxx - wyy)
    xi[0] = m00 * tx + m01 * ty + m02 * tz
    xi[1] = m10 * tx + m11 * ty + m12 * tz
    xi[2] = m20 * tx + m21 * ty + m22 * tz
    xi[3] = wx
    xi[4] = wy
    xi[5] = wz
    return True


@njit(cache=True)
def _quad_form(weight, xi):
    total = 0.0
    for a in range(6):
        row = 0.0
        for b in range(6):
            row += weight[a, b] * xi[b]
        total += xi[a] * row
    return 0.5 * total


@njit(cache=True)
def _bound_violation(x, lo, hi):
    v = 0.0
    if x > hi:
        v = x - hi
    elif x < lo:
        v = x - lo
    return v


@njit(parallel=True, cache=True)
def evaluate_batch(
    q0,
    qd0,
    controls,
    dt,
    base_r,
    base_t,
    off_r,
    off_t,
    axes,
    sph_link,
    sph_loc,
    sph_r,
    pairs,
    goal_r,
    goal_t,
    pose_weight,
    terminal_weight,
    pos_lo,
    pos_hi,
    vel_lo,
    vel_hi,
    acc_lo,
    acc_hi,
    w_env,
    w_self,
    w_q,
    w_qd,
    w_qdd,
    w_s,
    w_ns,
    d_act,
    q_ref,
    field_sq,
    field_lo0,
    field_lo1,
    field_lo2,
    field_origin0,
    field_origin1,
    field_origin2,
    field_voxel,
    field_outside,
    store_traj,
    store_spheres,
    costs,
    terms,
    traj_q,
    traj_qd,
    sphere_pos,
    flags,
):
    """Roll out and score every sample; writes only to per-sample output rows.

    terms columns: pose, collision, limits, smoothness, nullspace, terminal.
    flags[m] is set when a pose error hits the logarithm singularity; the
    caller turns that into an exception.
    """
    n_samples = controls.shape[0]
    horizon = controls.shape[1]
    n = controls.shape[2]
    n_spheres = sph_link.shape[0]
    n_pairs = pairs.shape[0]
    for m in prange(n_samples):
        q = np.empty(n)
        qd = np.empty(n)
        for i in range(n):
            q[i] = q0[i]
            qd[i] = qd0[i]
        frames_r = np.empty((n + 1, 3, 3))
        frames_t = np.empty((n + 1, 3))
        centers = np.empty((n_spheres, 3))
        xi = np.empty(6)
        pose_sum = 0.0
        coll_sum = 0.0
        lim_sum = 0.0
        smooth_sum = 0.0
        null_sum = 0.0
        failed = False
        for k in range(horizon):
            if store_traj:
                for i in range(n):
                    traj_q[m, k, i] = q[i]
                    traj_qd[m, k, i] = qd[i]
            _fk_frames(base_r, base_t, off_r, off_t, axes, q, frames_r, frames_t)
            if not _pose_error(frames_r[n], frames_t[n], goal_r, goal_t, xi):
                failed = True
                break
            pose_sum += _quad_form(pose_weight, xi)
            for s in range(n_spheres):
                li = sph_link[s]
                px = (
                    frames_r[li, 0, 0] * sph_loc[s, 0]
                    + frames_r[li, 0, 1] * sph_loc[s, 1]
                    + frames_r[li, 0, 2] * sph_loc[s, 2]
                    + frames_t[li, 0]
                )
                py = (
                    frames_r[li, 1, 0] * sph_loc[s, 0]
                    + frames_r[li, 1, 1] * sph_loc[s, 1]
                    + frames_r[li, 1, 2] * sph_loc[s, 2]
                    + frames_t[li, 1]
                )
                pz = (
                    frames_r[li, 2, 0] * sph_loc[s, 0]
                    + frames_r[li, 2, 1] * sph_loc[s, 1]
                    + frames_r[li, 2, 2] * sph_loc[s, 2]
                    + frames_t[li, 2]
                )
                centers[s, 0] = px
                centers[s, 1] = py
                centers[s, 2] = pz
                if store_spheres:
                    sphere_pos[m, k, s, 0] = px
                    sphere_pos[m, k, s, 1] = py
                    sphere_pos[m, k, s, 2] = pz
                dist = _query_metric(
                    field_sq,
                    field_lo0,
                    field_lo1,
                    field_lo2,
                    field_origin0,
                    field_origin1,
                    field_origin2,
                    field_voxel,
                    field_outside,
                    px,
                    py,
                    pz,
                )
                gap = d_act - (dist - sph_r[s])
                if gap > 0.0:
                    coll_sum += w_env * gap * gap
            for p in range(n_pairs):
                i = pairs[p, 0]
                j = pairs[p, 1]
                dx = centers[i, 0] - centers[j, 0]
                dy = centers[i, 1] - centers[j, 1]
                dz = centers[i, 2] - centers[j, 2]
                gap = math.sqrt(dx * dx + dy * dy + dz * dz) - (sph_r[i] + sph_r[j])
                if gap < 0.0:
                    coll_sum += w_self * gap * gap
            for i in range(n):
                u = controls[m, k, i]
                vq = _bound_violation(q[i], pos_lo[i], pos_hi[i])
                vv = _bound_violation(qd[i], vel_lo[i], vel_hi[i])
                va = _bound_violation(u, acc_lo[i], acc_hi[i])
                lim_sum += w_q * vq * vq + w_qd * vv * vv + w_qdd * va * va
                smooth_sum += w_s * u * u
                dq = q[i] - q_ref[i]
                null_sum += w_ns * dq * dq
            for i in range(n):
                qd[i] = qd[i] + controls[m, k, i] * dt
                q[i] = q[i] + qd[i] * dt
        if failed:
            flags[m] = 1
            costs[m] = np.inf
            continue
        if store_traj:
            for i in range(n):
                traj_q[m, horizon, i] = q[i]
                traj_qd[m, horizon, i] = qd[i]
        _fk_frames(base_r, base_t, off_r, off_t, axes, q, frames_r, frames_t)
        if not _pose_error(frames_r[n], frames_t[n], goal_r, goal_t, xi):
            flags[m] = 1
            costs[m] = np.inf
            continue
        term_sum = _quad_form(terminal_weight, xi)
        terms[m, 0] = pose_sum
        terms[m, 1] = coll_sum
        terms[m, 2] = lim_sum
        terms[m, 3] = smooth_sum
        terms[m, 4] = null_sum
        terms[m, 5] = term_sum
        costs[m] = pose_sum + coll_sum + lim_sum + smooth_sum + null_sum + term_sum
        flags[m] = 0
