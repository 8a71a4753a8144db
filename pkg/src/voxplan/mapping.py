"""Occupancy grid mapping and the exact squared Euclidean distance transform.

The grid is a dense axis-aligned box of voxels. Linear voxel order is
``x * (Ny * Nz) + y * Nz + z``: the x stride is Ny*Nz and z is unit stride.
Occupancy is fused by projecting voxel centers into the sensor measurement
domain (image plane or spherical bins) instead of casting rays, so every
voxel updates independently and the result cannot depend on scheduling.

The distance transform runs the linear-time 1D lower-envelope transform
along y, then x, then z. Lines that are strided in memory are gathered into
a contiguous scratch row, transformed there, and scattered back; the full
tensor is never permuted. Occupied voxels are zero-distance sources; free
and unknown voxels start at a large sentinel.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field as dataclass_field
from enum import IntEnum

import numpy as np
from numba import njit, prange

from voxplan.errors import FrameMismatch, VolumeOutOfBounds
from voxplan.geometry import RigidTransform

# Finite stand-in for "no source anywhere". Large enough that it can never
# be confused with a reachable squared distance, small enough that envelope
# intersections stay well inside float64 range.
INF_SENTINEL = 1e20


class VoxelState(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


@dataclass(frozen=True)
class MapParams:
    """Log-odds fusion constants and the depth-match tolerance factor."""

    l_hit: float = 0.85
    l_miss: float = -0.4
    l_min: float = -2.0
    l_max: float = 3.5
    l_occ_threshold: float = 1.0
    tau_factor: float = 2.5  # depth tolerance = tau_factor * voxel_size


@dataclass(frozen=True)
class VoxelBox:
    """Half-open axis-aligned voxel index box [lo, hi)."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError(f"empty voxel box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(l, h) for l, h in zip(self.lo, self.hi))


class VoxelGrid:
    """Dense occupancy grid over an axis-aligned world box.

    ``origin`` is the minimum corner of voxel (0, 0, 0); the center of voxel
    (i, j, k) lies at origin + (i + 1/2, j + 1/2, k + 1/2) * voxel_size.
    """

    def __init__(self, origin, voxel_size: float, dims, params: MapParams | None = None):
        origin = np.asarray(origin, dtype=float).reshape(3)
        dims = tuple(int(d) for d in dims)
        if any(d < 1 for d in dims):
            raise ValueError(f"grid dims must be >= 1, got {dims}")
        if voxel_size <= 0.0:
            raise ValueError(f"voxel size must be positive, got {voxel_size}")
        self.origin = origin
        self.voxel_size = float(voxel_size)
        self.dims = dims
        self.params = params or MapParams()
        self.log_odds = np.zeros(dims, dtype=np.float64)
        self.observed = np.zeros(dims, dtype=np.bool_)
        self._frozen = False

    @property
    def tau(self) -> float:
        return self.params.tau_factor * self.voxel_size

    def full_box(self) -> VoxelBox:
        return VoxelBox((0, 0, 0), self.dims)

    def voxel_center(self, index) -> np.ndarray:
        return self.origin + (np.asarray(index, dtype=float) + 0.5) * self.voxel_size

    def world_to_voxel(self, point) -> np.ndarray:
        return np.floor(
            (np.asarray(point, dtype=float) - self.origin) / self.voxel_size
        ).astype(np.int64)

    def occupied_mask(self) -> np.ndarray:
        return self.log_odds >= self.params.l_occ_threshold

    def states(self) -> np.ndarray:
        """Per-voxel VoxelState values derived from log-odds and observation."""
        occ = self.occupied_mask()
        free = self.observed & (self.log_odds <= 0.0) & ~occ
        out = np.full(self.dims, int(VoxelState.UNKNOWN), dtype=np.int8)
        out[free] = int(VoxelState.FREE)
        out[occ] = int(VoxelState.OCCUPIED)
        return out

    def freeze(self) -> "VoxelGrid":
        """Deep, immutable copy; later updates to self never touch it."""
        clone = VoxelGrid(self.origin, self.voxel_size, self.dims, self.params)
        clone.log_odds = self.log_odds.copy()
        clone.observed = self.observed.copy()
        clone.log_odds.flags.writeable = False
        clone.observed.flags.writeable = False
        clone._frozen = True
        return clone

    def validate_box(self, box: VoxelBox) -> None:
        for axis in range(3):
            if box.lo[axis] < 0 or box.hi[axis] > self.dims[axis]:
                raise VolumeOutOfBounds(
                    f"volume {box.lo}..{box.hi} exceeds grid dims {self.dims}"
                )


@dataclass(frozen=True)
class CameraModel:
    """Pinhole depth camera; pose maps camera coordinates to world."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    d_min: float
    d_max: float
    pose: RigidTransform = dataclass_field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        if not 0.0 < self.d_min < self.d_max:
            raise ValueError(f"need 0 < d_min < d_max, got [{self.d_min}, {self.d_max}]")

    def world_to_camera(self) -> tuple[np.ndarray, np.ndarray]:
        inv = self.pose.inverse()
        return inv.rotation.matrix, inv.translation


@dataclass(frozen=True)
class LidarModel:
    """Spinning range sensor binned over azimuth and elevation."""

    azimuth_bins: int
    elevation_bins: int
    elevation_range: tuple[float, float]
    max_range: float
    pose: RigidTransform = dataclass_field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if self.azimuth_bins < 1 or self.elevation_bins < 1:
            raise ValueError("bin counts must be >= 1")
        lo, hi = self.elevation_range
        if not lo < hi:
            raise ValueError(f"elevation range must be increasing, got [{lo}, {hi}]")


class DepthImage:
    """Row-major depth raster in meters; 0 or NaN marks no return."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"depth image must be 2-D, got shape {data.shape}")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def write_depth_raw(image: DepthImage, path) -> None:
    """Binary depth format: u32 width, u32 height (little endian), f32 pixels."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", image.width, image.height))
        fh.write(np.ascontiguousarray(image.data, dtype="<f4").tobytes())


def read_depth_raw(path) -> DepthImage:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"truncated depth header in {path}")
        width, height = struct.unpack("<II", header)
        payload = fh.read(4 * width * height)
        if len(payload) != 4 * width * height:
            raise ValueError(f"truncated depth payload in {path}")
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    return DepthImage(data.astype(np.float64))


def read_depth_png16(path) -> DepthImage:
    """16-bit grayscale PNG in millimeters, converted to meters; 0 = no return."""
    from PIL import Image

    with Image.open(path) as img:
        raw = np.asarray(img)
    if raw.dtype not in (np.uint16, np.int32):
        raise ValueError(f"expected a 16-bit raster, got dtype {raw.dtype}")
    return DepthImage(raw.astype(np.float64) / 1000.0)


def project_camera(point, cam: CameraModel):
    """Pinhole projection of a world point: (u, v, depth), or None when behind."""
    r, t = cam.world_to_camera()
    p = r @ np.asarray(point, dtype=float) + t
    z = p[2]
    if z <= 0.0:
        return None
    u = cam.fx * p[0] / z + cam.cx
    v = cam.fy * p[1] / z + cam.cy
    return u, v, z


def project_lidar(point, lidar: LidarModel):
    """Spherical-bin projection: (azimuth bin, elevation bin, range), or None."""
    inv = lidar.pose.inverse()
    p = inv.rotation.matrix @ np.asarray(point, dtype=float) + inv.translation
    rng = float(np.linalg.norm(p))
    if rng <= 0.0 or rng > lidar.max_range:
        return None
    elevation = math.asin(p[2] / rng)
    lo, hi = lidar.elevation_range
    if elevation < lo or elevation > hi:
        return None
    azimuth = math.atan2(p[1], p[0]) % (2.0 * math.pi)
    az_bin = int(azimuth / (2.0 * math.pi) * lidar.azimuth_bins)
    az_bin = min(az_bin, lidar.azimuth_bins - 1)
    el_bin = int((elevation - lo) / (hi - lo) * lidar.elevation_bins)
    el_bin = min(el_bin, lidar.elevation_bins - 1)
    return az_bin, el_bin, rng


@njit(cache=True)
def _fuse_voxels(
    log_odds,
    observed,
    lo0,
    lo1,
    lo2,
    n0,
    n1,
    n2,
    origin,
    voxel,
    cam_r,
    cam_t,
    fx,
    fy,
    cx,
    cy,
    width,
    height,
    d_min,
    d_max,
    depth,
    pixel_masked,
    mask_centers,
    mask_radii,
    tau,
    l_hit,
    l_miss,
    l_min,
    l_max,
):
    n_mask = mask_centers.shape[0]
    total = n0 * n1 * n2
    for flat in prange(total):
        i0 = flat // (n1 * n2)
        rem = flat % (n1 * n2)
        i1 = rem // n2
        i2 = rem % n2
        x = lo0 + i0
        y = lo1 + i1
        z = lo2 + i2
        px = origin[0] + (x + 0.5) * voxel
        py = origin[1] + (y + 0.5) * voxel
        pz = origin[2] + (z + 0.5) * voxel

        masked = False
        for s in range(n_mask):
            dx = px - mask_centers[s, 0]
            dy = py - mask_centers[s, 1]
            dz = pz - mask_centers[s, 2]
            if dx * dx + dy * dy + dz * dz < mask_radii[s] * mask_radii[s]:
                masked = True
                break
        if masked:
            # Body voxel: reset to a non-occupied, observed state.
            if log_odds[x, y, z] > 0.0:
                log_odds[x, y, z] = 0.0
            observed[x, y, z] = True
            continue

        qx = cam_r[0, 0] * px + cam_r[0, 1] * py + cam_r[0, 2] * pz + cam_t[0]
        qy = cam_r[1, 0] * px + cam_r[1, 1] * py + cam_r[1, 2] * pz + cam_t[1]
        qz = cam_r[2, 0] * px + cam_r[2, 1] * py + cam_r[2, 2] * pz + cam_t[2]
        if qz <= 0.0:
            continue
        u = fx * qx / qz + cx
        v = fy * qy / qz + cy
        ui = int(math.floor(u + 0.5))
        vi = int(math.floor(v + 0.5))
        if ui < 0 or ui >= width or vi < 0 or vi >= height:
            continue
        measured = depth[vi, ui]
        if not (measured >= d_min and measured <= d_max):
            continue  # no return at this pixel
        if pixel_masked[vi, ui]:
            continue  # return came from the robot body; discard
        if abs(qz - measured) <= tau:
            value = log_odds[x, y, z] + l_hit
        elif qz < measured - tau:
            value = log_odds[x, y, z] + l_miss
        else:
            continue  # occluded: behind the observed surface
        if value < l_min:
            value = l_min
        elif value > l_max:
            value = l_max
        log_odds[x, y, z] = value
        observed[x, y, z] = True


def _masked_pixels(
    depth: DepthImage, cam: CameraModel, centers, radii, pad: float
) -> np.ndarray:
    """Pixels whose back-projected 3D point lies inside a mask sphere.

    `pad` inflates the spheres: returns from the body surface land exactly on
    the sphere boundary, so a strict inside test would keep them and fuse the
    robot into its own map.
    """
    d = depth.data
    valid = (d >= cam.d_min) & (d <= cam.d_max)
    if centers.shape[0] == 0 or not valid.any():
        return np.zeros(d.shape, dtype=np.bool_)
    vs, us = np.nonzero(valid)
    z = d[vs, us]
    x = (us - cam.cx) / cam.fx * z
    y = (vs - cam.cy) / cam.fy * z
    pts = np.stack([x, y, z], axis=1) @ cam.pose.rotation.matrix.T + cam.pose.translation
    inside = np.zeros(pts.shape[0], dtype=np.bool_)
    for c, r in zip(centers, radii):
        inside |= ((pts - c) ** 2).sum(axis=1) < (r + pad) * (r + pad)
    out = np.zeros(d.shape, dtype=np.bool_)
    out[vs[inside], us[inside]] = True
    return out


DEFAULT_MASK_PAD = 0.01


def update_occupancy(
    grid: VoxelGrid,
    depth: DepthImage,
    cam: CameraModel,
    mask: tuple[np.ndarray, np.ndarray] | None = None,
    volume: VoxelBox | None = None,
    mask_pad: float = DEFAULT_MASK_PAD,
) -> VoxelGrid:
    """Fuse one depth image into the grid by voxel projection.

    Every voxel center in `volume` (whole grid when omitted) is projected
    into the image. A voxel whose projected depth matches the measured depth
    within the tolerance accumulates positive log-odds; one in front of the
    surface accumulates negative log-odds; one behind the surface is left
    untouched. When `mask` (sphere centers and radii) is given, voxels inside
    any mask sphere are reset to a non-occupied state and depth returns that
    back-project into a mask sphere (inflated by `mask_pad` meters) are
    discarded.

    Mutates and returns `grid`.
    """
    if grid._frozen:
        raise ValueError("cannot update a frozen grid snapshot")
    if depth.data.shape != (cam.height, cam.width):
        raise FrameMismatch(
            f"depth image is {depth.data.shape}, camera expects "
            f"{(cam.height, cam.width)}"
        )
    box = volume or grid.full_box()
    grid.validate_box(box)
    if mask is None:
        centers = np.zeros((0, 3))
        radii = np.zeros(0)
    else:
        centers = np.ascontiguousarray(mask[0], dtype=np.float64).reshape(-1, 3)
        radii = np.ascontiguousarray(mask[1], dtype=np.float64).reshape(-1)
    pixel_masked = _masked_pixels(depth, cam, centers, radii, mask_pad)
    cam_r, cam_t = cam.world_to_camera()
    _fuse_voxels(
        grid.log_odds,
        grid.observed,
        box.lo[0],
        box.lo[1],
        box.lo[2],
        box.shape[0],
        box.shape[1],
        box.shape[2],
        grid.origin,
        grid.voxel_size,
        np.ascontiguousarray(cam_r),
        np.ascontiguousarray(cam_t),
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        cam.width,
        cam.height,
        cam.d_min,
        cam.d_max,
        depth.data,
        pixel_masked,
        centers,
        radii,
        grid.tau,
        grid.params.l_hit,
        grid.params.l_miss,
        grid.params.l_min,
        grid.params.l_max,
    )
    return grid


@njit(cache=True)
def _fh_envelope(f, d, v, z, n):
    """Linear-time 1D squared-distance transform by lower envelope of parabolas."""
    k = 0
    v[0] = 0
    z[0] = -INF_SENTINEL
    z[1] = INF_SENTINEL
    for q in range(1, n):
        fq = f[q] + q * q
        while True:
            p = v[k]
            s = (fq - (f[p] + p * p)) / (2.0 * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = INF_SENTINEL
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        d[q] = (q - p) * (q - p) + f[p]


def fh_1d(line: np.ndarray) -> np.ndarray:
    """Exact 1D transform: out[i] = min_j (i - j)^2 + line[j].

    Accepts np.inf entries as "no source here"; positions unreachable from
    any finite entry come back as np.inf.
    """
    line = np.asarray(line, dtype=np.float64)
    n = line.shape[0]
    f = np.where(np.isfinite(line), line, INF_SENTINEL)
    d = np.empty(n)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1)
    _fh_envelope(f, d, v, z, n)
    return np.where(d >= INF_SENTINEL / 2.0, np.inf, d)


@njit(parallel=True, cache=True)
def _edt_pass_x(vals):
    nx, ny, nz = vals.shape
    for idx in prange(ny * nz):
        y = idx // nz
        z = idx % nz
        f = np.empty(nx)
        d = np.empty(nx)
        v = np.empty(nx, dtype=np.int64)
        zz = np.empty(nx + 1)
        for x in range(nx):  # gather the strided line into a contiguous row
            f[x] = vals[x, y, z]
        _fh_envelope(f, d, v, zz, nx)
        for x in range(nx):
            vals[x, y, z] = d[x]


@njit(parallel=True, cache=True)
def _edt_pass_y(vals):
    nx, ny, nz = vals.shape
    for idx in prange(nx * nz):
        x = idx // nz
        z = idx % nz
        f = np.empty(ny)
        d = np.empty(ny)
        v = np.empty(ny, dtype=np.int64)
        zz = np.empty(ny + 1)
        for y in range(ny):
            f[y] = vals[x, y, z]
        _fh_envelope(f, d, v, zz, ny)
        for y in range(ny):
            vals[x, y, z] = d[y]


@njit(parallel=True, cache=True)
def _edt_pass_z(vals):
    nx, ny, nz = vals.shape
    for idx in prange(nx * ny):
        x = idx // ny
        y = idx % ny
        f = np.empty(nz)
        d = np.empty(nz)
        v = np.empty(nz, dtype=np.int64)
        zz = np.empty(nz + 1)
        for z in range(nz):
            f[z] = vals[x, y, z]
        _fh_envelope(f, d, v, zz, nz)
        for z in range(nz):
            vals[x, y, z] = d[z]


_EDT_PASSES = {"x": _edt_pass_x, "y": _edt_pass_y, "z": _edt_pass_z}


@dataclass(frozen=True)
class DistanceField:
    """Squared voxel distances to the nearest occupied voxel over one box.

    Values are in voxel^2 units; metric distance is voxel_size * sqrt(value).
    Unreachable voxels (no source in the volume) hold +inf.
    """

    origin: np.ndarray
    voxel_size: float
    dims: tuple[int, int, int]
    volume: VoxelBox
    sq: np.ndarray
    outside_default: float

    def __post_init__(self):
        sq = np.asarray(self.sq, dtype=np.float64)
        if sq.shape != self.volume.shape:
            raise ValueError(f"sq shape {sq.shape} != volume shape {self.volume.shape}")
        sq = sq.copy()
        sq.flags.writeable = False
        object.__setattr__(self, "sq", sq)
        origin = np.asarray(self.origin, dtype=float).reshape(3).copy()
        origin.flags.writeable = False
        object.__setattr__(self, "origin", origin)

    def metric(self) -> np.ndarray:
        return self.voxel_size * np.sqrt(self.sq)


def edt_3d(
    grid: VoxelGrid,
    volume: VoxelBox | None = None,
    outside_default: float = 1.0,
    pass_order: tuple[str, str, str] = ("y", "x", "z"),
) -> DistanceField:
    """Exact squared EDT of the occupied voxels inside `volume`.

    Applies the 1D transform along each axis of `pass_order` in turn; the
    result is independent of that order.
    """
    box = volume or grid.full_box()
    grid.validate_box(box)
    if sorted(pass_order) != ["x", "y", "z"]:
        raise ValueError(f"pass_order must permute x, y, z; got {pass_order}")
    occ = grid.occupied_mask()[box.slices()]
    vals = np.where(occ, 0.0, INF_SENTINEL)
    for axis in pass_order:
        _EDT_PASSES[axis](vals)
    vals[vals >= INF_SENTINEL / 2.0] = np.inf
    return DistanceField(
        origin=grid.origin,
        voxel_size=grid.voxel_size,
        dims=grid.dims,
        volume=box,
        sq=vals,
        outside_default=outside_default,
    )


@njit(cache=True)
def _query_metric(
    sq,
    lo0,
    lo1,
    lo2,
    origin0,
    origin1,
    origin2,
    voxel,
    outside_default,
    px,
    py,
    pz,
):
    """Metric distance at a world point; shared by query_distance and the planner."""
    n0, n1, n2 = sq.shape
    g0 = (px - origin0) / voxel - lo0
    g1 = (py - origin1) / voxel - lo1
    g2 = (pz - origin2) / voxel - lo2
    if g0 < 0.0 or g0 >= n0 or g1 < 0.0 or g1 >= n1 or g2 < 0.0 or g2 >= n2:
        return outside_default
    i0 = int(g0)
    i1 = int(g1)
    i2 = int(g2)
    if sq[i0, i1, i2] == 0.0:
        return 0.0
    if sq[i0, i1, i2] == np.inf:
        return np.inf  # no source in the volume; all values are inf
    # Trilinear interpolation on the voxel-center lattice.
    c0 = g0 - 0.5
    c1 = g1 - 0.5
    c2 = g2 - 0.5
    if c0 < 0.0:
        c0 = 0.0
    elif c0 > n0 - 1.0:
        c0 = n0 - 1.0
    if c1 < 0.0:
        c1 = 0.0
    elif c1 > n1 - 1.0:
        c1 = n1 - 1.0
    if c2 < 0.0:
        c2 = 0.0
    elif c2 > n2 - 1.0:
        c2 = n2 - 1.0
    a0 = int(c0)
    a1 = int(c1)
    a2 = int(c2)
    b0 = a0 + 1 if a0 + 1 < n0 else a0
    b1 = a1 + 1 if a1 + 1 < n1 else a1
    b2 = a2 + 1 if a2 + 1 < n2 else a2
    f0 = c0 - a0
    f1 = c1 - a1
    f2 = c2 - a2
    v000 = sq[a0, a1, a2]
    v001 = sq[a0, a1, b2]
    v010 = sq[a0, b1, a2]
    v011 = sq[a0, b1, b2]
    v100 = sq[b0, a1, a2]
    v101 = sq[b0, a1, b2]
    v110 = sq[b0, b1, a2]
    v111 = sq[b0, b1, b2]
    c00 = v000 * (1.0 - f0) + v100 * f0
    c01 = v001 * (1.0 - f0) + v101 * f0
    c10 = v010 * (1.0 - f0) + v110 * f0
    c11 = v011 * (1.0 - f0) + v111 * f0
    c0v = c00 * (1.0 - f1) + c10 * f1
    c1v = c01 * (1.0 - f1) + c11 * f1
    value = c0v * (1.0 - f2) + c1v * f2
    return voxel * math.sqrt(value)


def query_distance(field: DistanceField, point) -> float:
    """Distance in meters from `point` to the nearest occupied voxel.

    Zero inside occupied voxels, trilinearly interpolated elsewhere, and
    `outside_default` for points outside the field volume.
    """
    p = np.asarray(point, dtype=float).reshape(3)
    return float(
        _query_metric(
            field.sq,
            field.volume.lo[0],
            field.volume.lo[1],
            field.volume.lo[2],
            field.origin[0],
            field.origin[1],
            field.origin[2],
            field.voxel_size,
            field.outside_default,
            p[0],
            p[1],
            p[2],
        )
    )


@dataclass(frozen=True)
class MapSnapshot:
    """Immutable (grid, field) pair published by the mapper to the planner."""

    grid: VoxelGrid
    field: DistanceField


def snapshot(grid: VoxelGrid, field: DistanceField) -> MapSnapshot:
    """Freeze the grid alongside its distance field; later updates never alter it."""
    return MapSnapshot(grid.freeze(), field)


class OccupancyMapper:
    """Single-writer fusion pipeline: update, recompute the local EDT, publish.

    `outside_default` is the distance reported for queries outside the local
    volume; pick it large enough that out-of-volume space never triggers a
    collision penalty.
    """

    def __init__(
        self,
        grid: VoxelGrid,
        cam: CameraModel,
        volume: VoxelBox | None = None,
        outside_default: float = 1.0,
        mask_pad: float = DEFAULT_MASK_PAD,
    ):
        self.grid = grid
        self.cam = cam
        self.volume = volume or grid.full_box()
        grid.validate_box(self.volume)
        self.outside_default = float(outside_default)
        self.mask_pad = float(mask_pad)
        self._field: DistanceField | None = None

    def update(self, depth: DepthImage, mask=None) -> None:
        update_occupancy(
            self.grid,
            depth,
            self.cam,
            mask=mask,
            volume=self.volume,
            mask_pad=self.mask_pad,
        )

    def recompute_edt(self) -> DistanceField:
        self._field = edt_3d(self.grid, self.volume, self.outside_default)
        return self._field

    def snapshot(self) -> MapSnapshot:
        if self._field is None:
            self.recompute_edt()
        return snapshot(self.grid, self._field)


def dump_grid_text(grid: VoxelGrid, path, field: DistanceField | None = None) -> None:
    """Debug dump, one voxel per line: x y z state log_odds sqdist."""
    states = grid.states()
    sq = np.full(grid.dims, np.nan)
    if field is not None:
        sq[field.volume.slices()] = field.sq
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# x y z state log_odds sqdist\n")
        for x in range(grid.dims[0]):
            for y in range(grid.dims[1]):
                for z in range(grid.dims[2]):
                    fh.write(
                        f"{x} {y} {z} {int(states[x, y, z])} "
                        f"{grid.log_odds[x, y, z]:.6g} {sq[x, y, z]:.6g}\n"
                    )
