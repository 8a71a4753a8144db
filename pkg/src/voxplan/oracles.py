"""Independent brute-force reference computations.

Everything here deliberately avoids the production code paths it is used to
check: the matrix logarithm is a scaled power series instead of closed-form
trigonometry, distances are exhaustive minima instead of separable
transforms, and voxel classification walks explicit rays instead of fusing
log-odds. Used by the test suite and the ``oracle`` CLI subcommand.
"""

from __future__ import annotations

import numpy as np


def denman_beavers_sqrt(a: np.ndarray, tol: float = 1e-14, max_iters: int = 100) -> np.ndarray:
    """Principal matrix square root by the Denman-Beavers iteration."""
    y = np.asarray(a, dtype=float).copy()
    z = np.eye(y.shape[0])
    for _ in range(max_iters):
        y_next = 0.5 * (y + np.linalg.inv(z))
        z_next = 0.5 * (z + np.linalg.inv(y))
        delta = np.abs(y_next - y).max()
        y, z = y_next, z_next
        if delta < tol:
            return y
    raise RuntimeError("matrix square root iteration did not converge")


def matrix_log_series(m: np.ndarray, tol: float = 1e-16, max_terms: int = 10_000) -> np.ndarray:
    """Matrix logarithm via the alternating power series in (M - I).

    The series sum_k (-1)^(k+1) (M - I)^k / k only converges near the
    identity, so the argument is first driven toward I by repeated principal
    square roots and the result is scaled back by the matching power of two.
    """
    a = np.asarray(m, dtype=float).copy()
    n = a.shape[0]
    eye = np.eye(n)
    squarings = 0
    while np.linalg.norm(a - eye, ord="fro") > 0.25:
        a = denman_beavers_sqrt(a)
        squarings += 1
        if squarings > 64:
            raise RuntimeError("matrix is not converging toward the identity")
    x = a - eye
    power = eye.copy()
    total = np.zeros_like(a)
    for k in range(1, max_terms + 1):
        power = power @ x
        term = power / k
        if k % 2 == 1:
            total += term
        else:
            total -= term
        if np.abs(term).max() < tol:
            break
    return total * float(2**squarings)


def se3_log_vector_series(matrix4: np.ndarray) -> np.ndarray:
    """Twist [v, omega] extracted from the series log of a homogeneous 4x4 matrix."""
    lg = matrix_log_series(matrix4)
    v = lg[:3, 3]
    omega = np.array([lg[2, 1], lg[0, 2], lg[1, 0]])
    return np.concatenate([v, omega])


def brute_force_sqdist(occupied: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Exact squared voxel distance to the nearest occupied voxel, O(n * k).

    `occupied` is a boolean (nx, ny, nz) array. Voxels with no source anywhere
    get +inf. Every pairwise distance is evaluated through the expansion
    |v - s|^2 = |v|^2 + |s|^2 - 2 v.s; all terms are integers far below 2^53,
    so the float64 arithmetic is exact regardless of summation order.
    """
    occupied = np.asarray(occupied, dtype=bool)
    sources = np.argwhere(occupied).astype(np.float64)
    out = np.full(occupied.size, np.inf)
    if sources.shape[0] == 0:
        return out.reshape(occupied.shape)
    coords = np.indices(occupied.shape).reshape(3, -1).T.astype(np.float64)
    src_sq = (sources**2).sum(axis=1)
    for start in range(0, coords.shape[0], chunk):
        block = coords[start : start + chunk]
        cross = block @ sources.T
        d2 = (block**2).sum(axis=1)[:, None] + src_sq[None, :] - 2.0 * cross
        out[start : start + block.shape[0]] = d2.min(axis=1)
    return out.reshape(occupied.shape)


def brute_force_fh_1d(line: np.ndarray) -> np.ndarray:
    """Exact 1D squared-distance lower envelope by the O(k^2) double loop."""
    line = np.asarray(line, dtype=float)
    k = line.shape[0]
    out = np.full(k, np.inf)
    for i in range(k):
        for j in range(k):
            cand = (i - j) ** 2 + line[j]
            if cand < out[i]:
                out[i] = cand
    return out


def raycast_box_depth(cam_pos, cam_rot, fx, fy, cx, cy, width, height, d_min, d_max, boxes):
    """Per-pixel z-depth of the nearest axis-aligned box along each pixel ray.

    `boxes` is a list of (lo, hi) world corner pairs. Pixels with no hit in
    [d_min, d_max] get 0 (no return). Own slab arithmetic, no shared code
    with the production renderer or mapper.
    """
    us, vs = np.meshgrid(np.arange(width), np.arange(height))
    dirs_cam = np.stack(
        [(us - cx) / fx, (vs - cy) / fy, np.ones_like(us, dtype=float)], axis=-1
    )
    dirs = dirs_cam @ np.asarray(cam_rot, dtype=float).T
    pos = np.asarray(cam_pos, dtype=float)
    best = np.full((height, width), np.inf)
    for lo, hi in boxes:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - pos) / dirs
            t2 = (hi - pos) / dirs
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        # Rays parallel to a slab: inside gives (-inf, inf), outside no hit.
        parallel = dirs == 0.0
        inside = (pos >= lo) & (pos <= hi)
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        tmin = near.max(axis=-1)
        tmax = far.min(axis=-1)
        hit = (tmax >= tmin) & (tmax > 0.0)
        t = np.where(tmin > 0.0, tmin, tmax)
        best = np.where(hit & (t < best), t, best)
    valid = (best >= d_min) & (best <= d_max)
    return np.where(valid, best, 0.0)


def classify_voxels_raycast(
    origin,
    voxel_size,
    dims,
    cam_pose_matrix,
    fx,
    fy,
    cx,
    cy,
    width,
    height,
    d_min,
    d_max,
    boxes,
    tau,
    frames,
    l_hit,
    l_occ_threshold,
    mask_centers=None,
    mask_radii=None,
    mask_pad=0.01,
):
    """Expected voxel labels for a static scene observed `frames` times.

    Returns (labels, margins): labels use 0 unknown / 1 free / 2 occupied and
    margins hold |projected - measured| depth (inf where no measurement
    applies), so callers can restrict comparisons to unambiguous voxels.
    """
    origin = np.asarray(origin, dtype=float)
    dims = tuple(dims)
    cam_pose_matrix = np.asarray(cam_pose_matrix, dtype=float)
    cam_rot = cam_pose_matrix[:3, :3]
    cam_pos = cam_pose_matrix[:3, 3]
    depth = raycast_box_depth(
        cam_pos, cam_rot, fx, fy, cx, cy, width, height, d_min, d_max, boxes
    )
    if mask_centers is None:
        mask_centers = np.zeros((0, 3))
        mask_radii = np.zeros(0)
    mask_centers = np.asarray(mask_centers, dtype=float).reshape(-1, 3)
    mask_radii = np.asarray(mask_radii, dtype=float).reshape(-1)

    # Depth returns originating on the robot body are dropped before fusion.
    pixel_dropped = np.zeros((height, width), dtype=bool)
    if mask_centers.shape[0]:
        vs, us = np.nonzero(depth > 0.0)
        z = depth[vs, us]
        pts_cam = np.stack([(us - cx) / fx * z, (vs - cy) / fy * z, z], axis=1)
        pts = pts_cam @ cam_rot.T + cam_pos
        inside = np.zeros(pts.shape[0], dtype=bool)
        for c, r in zip(mask_centers, mask_radii):
            inside |= ((pts - c) ** 2).sum(axis=1) < (r + mask_pad) * (r + mask_pad)
        pixel_dropped[vs[inside], us[inside]] = True

    idx = np.indices(dims).reshape(3, -1).T
    centers = origin + (idx + 0.5) * voxel_size
    labels = np.zeros(centers.shape[0], dtype=np.int8)
    margins = np.full(centers.shape[0], np.inf)

    masked = np.zeros(centers.shape[0], dtype=bool)
    for c, r in zip(mask_centers, mask_radii):
        masked |= ((centers - c) ** 2).sum(axis=1) < r * r
    labels[masked] = 1  # body voxels are reset to a known-free state

    p_cam = (centers - cam_pos) @ cam_rot  # world -> camera via R^T
    z = p_cam[:, 2]
    front = (z > 0.0) & ~masked
    u = np.where(front, fx * p_cam[:, 0] / np.where(front, z, 1.0) + cx, -1.0)
    v = np.where(front, fy * p_cam[:, 1] / np.where(front, z, 1.0) + cy, -1.0)
    ui = np.floor(u + 0.5).astype(int)
    vi = np.floor(v + 0.5).astype(int)
    in_image = front & (ui >= 0) & (ui < width) & (vi >= 0) & (vi < height)
    which = np.nonzero(in_image)[0]
    measured = depth[vi[which], ui[which]]
    usable = (measured > 0.0) & ~pixel_dropped[vi[which], ui[which]]
    which = which[usable]
    measured = measured[usable]
    zw = z[which]
    margins[which] = np.abs(zw - measured)
    occ_reached = frames * l_hit >= l_occ_threshold
    hit = np.abs(zw - measured) <= tau
    free = zw < measured - tau
    labels[which[free]] = 1
    if occ_reached:
        labels[which[hit]] = 2
    return labels.reshape(dims), margins.reshape(dims)
