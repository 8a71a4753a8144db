"""Occupancy fusion, the separable exact EDT, and distance queries."""

import math
import threading

import numpy as np
import pytest

from voxplan import parallel
from voxplan.errors import FrameMismatch, VolumeOutOfBounds
from voxplan.geometry import RigidTransform
from voxplan.mapping import (
    CameraModel,
    DepthImage,
    LidarModel,
    OccupancyMapper,
    VoxelBox,
    VoxelGrid,
    VoxelState,
    edt_3d,
    fh_1d,
    project_camera,
    project_lidar,
    query_distance,
    read_depth_png16,
    read_depth_raw,
    snapshot,
    update_occupancy,
    write_depth_raw,
)
from voxplan.oracles import (
    brute_force_fh_1d,
    brute_force_sqdist,
    classify_voxels_raycast,
    raycast_box_depth,
)

INF = np.inf


def single_voxel_grid(center_z: float, voxel: float = 0.1) -> VoxelGrid:
    origin = (-voxel / 2, -voxel / 2, center_z - voxel / 2)
    return VoxelGrid(origin, voxel, (1, 1, 1))


def unit_camera() -> CameraModel:
    return CameraModel(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=1, height=1, d_min=0.1, d_max=5.0)


class TestProjection:
    def test_camera_axis_point(self):
        cam = CameraModel(500.0, 500.0, 320.0, 240.0, 640, 480, 0.1, 10.0)
        u, v, depth = project_camera((0.0, 0.0, 2.0), cam)
        assert (u, v, depth) == (320.0, 240.0, 2.0)

    def test_camera_behind(self):
        cam = CameraModel(500.0, 500.0, 320.0, 240.0, 640, 480, 0.1, 10.0)
        assert project_camera((0.0, 0.0, -1.0), cam) is None

    def test_camera_offset_point(self):
        cam = CameraModel(500.0, 500.0, 320.0, 240.0, 640, 480, 0.1, 10.0)
        u, v, depth = project_camera((0.5, 0.0, 2.0), cam)
        assert u == pytest.approx(445.0, abs=1e-12)
        assert v == pytest.approx(240.0, abs=1e-12)
        assert depth == pytest.approx(2.0, abs=1e-12)

    def test_camera_respects_pose(self):
        pose = RigidTransform.from_translation((0.0, 0.0, -1.0))
        cam = CameraModel(500.0, 500.0, 320.0, 240.0, 640, 480, 0.1, 10.0, pose=pose)
        u, v, depth = project_camera((0.0, 0.0, 1.0), cam)
        assert depth == pytest.approx(2.0, abs=1e-12)

    def test_lidar_axis_point(self):
        lidar = LidarModel(8, 5, (-0.5, 0.5), 20.0)
        az, el, rng = project_lidar((5.0, 0.0, 0.0), lidar)
        assert az == 0
        assert el == 2  # middle of 5 bins for elevation 0
        assert rng == pytest.approx(5.0, abs=1e-12)

    def test_lidar_out_of_fov(self):
        lidar = LidarModel(8, 5, (-0.5, 0.5), 20.0)
        assert project_lidar((0.0, 0.0, 3.0), lidar) is None

    def test_lidar_diagonal(self):
        lidar = LidarModel(8, 5, (-0.5, 0.5), 20.0)
        az, el, rng = project_lidar((1.0, 1.0, 0.0), lidar)
        assert az == 1  # pi/4 falls in bin 1 of 8
        assert rng == pytest.approx(math.sqrt(2.0), abs=1e-12)


class TestFh1d:
    def test_single_source(self):
        out = fh_1d(np.array([INF, INF, 0.0, INF, INF]))
        np.testing.assert_array_equal(out, [4.0, 1.0, 0.0, 1.0, 4.0])

    def test_all_zero(self):
        out = fh_1d(np.zeros(7))
        np.testing.assert_array_equal(out, np.zeros(7))

    def test_all_inf(self):
        out = fh_1d(np.full(6, INF))
        assert np.all(np.isinf(out))

    def test_against_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n = rng.integers(1, 40)
            line = rng.integers(0, 50, size=n).astype(float)
            line[rng.random(n) < 0.5] = INF
            np.testing.assert_array_equal(fh_1d(line), brute_force_fh_1d(line))


def grid_with_occupied(dims, occupied_indices, voxel=0.1):
    grid = VoxelGrid((0.0, 0.0, 0.0), voxel, dims)
    for idx in occupied_indices:
        grid.log_odds[tuple(idx)] = grid.params.l_max
    return grid


class TestEdt3d:
    def test_single_center_source(self):
        grid = grid_with_occupied((3, 3, 3), [(1, 1, 1)])
        field = edt_3d(grid)
        assert field.sq[1, 1, 1] == 0.0
        assert field.sq[0, 1, 1] == 1.0  # face neighbor
        assert field.sq[0, 0, 1] == 2.0  # edge neighbor
        assert field.sq[0, 0, 0] == 3.0  # corner

    def test_no_sources(self):
        grid = grid_with_occupied((4, 4, 4), [])
        field = edt_3d(grid)
        assert np.all(np.isinf(field.sq))

    def test_fully_occupied(self):
        grid = VoxelGrid((0, 0, 0), 0.1, (4, 4, 4))
        grid.log_odds[:] = grid.params.l_max
        field = edt_3d(grid)
        np.testing.assert_array_equal(field.sq, np.zeros((4, 4, 4)))

    def test_exact_against_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            dims = (12, 12, 12)
            grid = VoxelGrid((0, 0, 0), 0.1, dims)
            density = rng.uniform(0.01, 0.5)
            occ = rng.random(dims) < density
            grid.log_odds[occ] = grid.params.l_max
            field = edt_3d(grid)
            expected = brute_force_sqdist(occ)
            np.testing.assert_array_equal(field.sq, expected)

    def test_pass_order_independent(self):
        rng = np.random.default_rng(7)
        dims = (9, 11, 6)
        grid = VoxelGrid((0, 0, 0), 0.1, dims)
        grid.log_odds[rng.random(dims) < 0.1] = grid.params.l_max
        a = edt_3d(grid, pass_order=("y", "x", "z"))
        b = edt_3d(grid, pass_order=("x", "y", "z"))
        c = edt_3d(grid, pass_order=("z", "y", "x"))
        np.testing.assert_array_equal(a.sq, b.sq)
        np.testing.assert_array_equal(a.sq, c.sq)

    def test_monotone_under_growth(self):
        rng = np.random.default_rng(11)
        dims = (10, 10, 10)
        grid = VoxelGrid((0, 0, 0), 0.1, dims)
        grid.log_odds[rng.random(dims) < 0.05] = grid.params.l_max
        before = edt_3d(grid).sq
        free = np.argwhere(grid.log_odds < grid.params.l_occ_threshold)
        extra = free[rng.integers(len(free))]
        grid.log_odds[tuple(extra)] = grid.params.l_max
        after = edt_3d(grid).sq
        assert np.all(after <= before)

    def test_sub_volume_only(self):
        grid = grid_with_occupied((6, 6, 6), [(1, 1, 1), (5, 5, 5)])
        box = VoxelBox((0, 0, 0), (3, 3, 3))
        field = edt_3d(grid, box)
        assert field.sq.shape == (3, 3, 3)
        # The source outside the volume is invisible to the transform.
        expected = brute_force_sqdist(grid.occupied_mask()[:3, :3, :3])
        np.testing.assert_array_equal(field.sq, expected)

    def test_volume_out_of_bounds(self):
        grid = grid_with_occupied((4, 4, 4), [])
        with pytest.raises(VolumeOutOfBounds):
            edt_3d(grid, VoxelBox((0, 0, 0), (5, 4, 4)))


class TestUpdateOccupancy:
    def test_voxel_in_front_becomes_free(self):
        grid = single_voxel_grid(center_z=1.0)
        update_occupancy(grid, DepthImage(np.array([[2.0]])), unit_camera())
        assert grid.states()[0, 0, 0] == VoxelState.FREE
        assert grid.log_odds[0, 0, 0] == pytest.approx(grid.params.l_miss)

    def test_voxel_behind_unchanged(self):
        grid = single_voxel_grid(center_z=2.5)
        update_occupancy(grid, DepthImage(np.array([[2.0]])), unit_camera())
        assert grid.states()[0, 0, 0] == VoxelState.UNKNOWN
        assert grid.log_odds[0, 0, 0] == 0.0
        assert not grid.observed[0, 0, 0]

    def test_voxel_on_surface_becomes_occupied_after_enough_hits(self):
        grid = single_voxel_grid(center_z=2.0)
        depth = DepthImage(np.array([[2.0]]))
        hits_needed = math.ceil(grid.params.l_occ_threshold / grid.params.l_hit)
        for i in range(hits_needed):
            update_occupancy(grid, depth, unit_camera())
            expected_state = (
                VoxelState.OCCUPIED if (i + 1) >= hits_needed else VoxelState.UNKNOWN
            )
            assert grid.states()[0, 0, 0] == expected_state

    def test_log_odds_clamped(self):
        grid = single_voxel_grid(center_z=2.0)
        depth = DepthImage(np.array([[2.0]]))
        for _ in range(20):
            update_occupancy(grid, depth, unit_camera())
        assert grid.log_odds[0, 0, 0] == grid.params.l_max

    def test_frame_mismatch(self):
        grid = single_voxel_grid(center_z=1.0)
        with pytest.raises(FrameMismatch):
            update_occupancy(grid, DepthImage(np.zeros((2, 3))), unit_camera())

    def test_thread_count_invariance(self):
        scene = classification_scene()
        results = []
        for threads in (1, 4, 8):
            parallel.set_threads(threads)
            grid = VoxelGrid(scene["origin"], scene["voxel"], scene["dims"])
            for _ in range(2):
                update_occupancy(
                    grid, scene["depth"], scene["cam"], mask=scene["mask"]
                )
            results.append((grid.log_odds.copy(), grid.observed.copy()))
        parallel.set_threads(1)
        for log_odds, observed in results[1:]:
            np.testing.assert_array_equal(log_odds, results[0][0])
            np.testing.assert_array_equal(observed, results[0][1])


def classification_scene():
    """One axis-aligned box viewed by a noiseless camera, plus a mask sphere."""
    origin = np.array([-1.0, -1.0, 0.0])
    voxel = 0.05
    dims = (40, 40, 40)
    box_lo = np.array([-0.2, -0.3, 0.8])
    box_hi = np.array([0.2, 0.3, 1.2])
    pose = RigidTransform.from_translation((0.0, 0.0, -0.8))
    cam = CameraModel(70.0, 70.0, 40.0, 30.0, 80, 60, 0.1, 6.0, pose=pose)
    depth = DepthImage(
        raycast_box_depth(
            pose.translation,
            pose.rotation.matrix,
            cam.fx,
            cam.fy,
            cam.cx,
            cam.cy,
            cam.width,
            cam.height,
            cam.d_min,
            cam.d_max,
            [(box_lo, box_hi)],
        )
    )
    mask_centers = np.array([[0.5, 0.5, 0.5]])
    mask_radii = np.array([0.15])
    return {
        "origin": origin,
        "voxel": voxel,
        "dims": dims,
        "box": (box_lo, box_hi),
        "cam": cam,
        "depth": depth,
        "mask": (mask_centers, mask_radii),
    }


class TestClassificationAgainstOracle:
    def test_labels_match_outside_surface_band(self):
        scene = classification_scene()
        grid = VoxelGrid(scene["origin"], scene["voxel"], scene["dims"])
        frames = 2
        for _ in range(frames):
            update_occupancy(grid, scene["depth"], scene["cam"], mask=scene["mask"])
        labels, margins = classify_voxels_raycast(
            scene["origin"],
            scene["voxel"],
            scene["dims"],
            scene["cam"].pose.as_matrix(),
            scene["cam"].fx,
            scene["cam"].fy,
            scene["cam"].cx,
            scene["cam"].cy,
            scene["cam"].width,
            scene["cam"].height,
            scene["cam"].d_min,
            scene["cam"].d_max,
            [scene["box"]],
            grid.tau,
            frames,
            grid.params.l_hit,
            grid.params.l_occ_threshold,
            mask_centers=scene["mask"][0],
            mask_radii=scene["mask"][1],
        )
        states = grid.states()
        unambiguous = margins > 2.0 * grid.tau
        assert unambiguous.sum() > 1000  # the comparison is not vacuous
        np.testing.assert_array_equal(
            np.asarray(states)[unambiguous], labels[unambiguous]
        )

    def test_mask_efficacy_every_frame(self):
        scene = classification_scene()
        # Park the mask sphere on the box surface so that, unmasked, its
        # voxels would accumulate hits.
        centers = np.array([[0.0, 0.0, 0.8]])
        radii = np.array([0.12])
        grid = VoxelGrid(scene["origin"], scene["voxel"], scene["dims"])
        idx = np.indices(scene["dims"]).reshape(3, -1).T
        voxel_centers = scene["origin"] + (idx + 0.5) * scene["voxel"]
        inside = (
            ((voxel_centers - centers[0]) ** 2).sum(axis=1) < radii[0] ** 2
        ).reshape(scene["dims"])
        for _ in range(4):
            update_occupancy(grid, scene["depth"], scene["cam"], mask=(centers, radii))
            occupied = grid.occupied_mask()
            assert not (occupied & inside).any()
        # Sanity: without the mask those voxels do become occupied.
        bare = VoxelGrid(scene["origin"], scene["voxel"], scene["dims"])
        for _ in range(4):
            update_occupancy(bare, scene["depth"], scene["cam"])
        assert (bare.occupied_mask() & inside).any()


class TestQueryDistance:
    def make_field(self):
        grid = grid_with_occupied((5, 5, 5), [(2, 2, 2)], voxel=0.1)
        return grid, edt_3d(grid, outside_default=0.7)

    def test_zero_at_occupied_center(self):
        grid, field = self.make_field()
        assert query_distance(field, grid.voxel_center((2, 2, 2))) == 0.0

    def test_one_voxel_from_source(self):
        grid, field = self.make_field()
        p = grid.voxel_center((3, 2, 2))
        assert query_distance(field, p) == pytest.approx(0.1, abs=1e-12)

    def test_outside_volume(self):
        _, field = self.make_field()
        assert query_distance(field, (10.0, 10.0, 10.0)) == pytest.approx(0.7)

    def test_interpolates_between_centers(self):
        grid, field = self.make_field()
        a = grid.voxel_center((3, 2, 2))
        b = grid.voxel_center((4, 2, 2))
        mid = 0.5 * (a + b)
        # sq interpolates 1 -> 4 linearly: value 2.5 at the midpoint.
        assert query_distance(field, mid) == pytest.approx(0.1 * math.sqrt(2.5), abs=1e-12)

    def test_inf_field_reports_inf(self):
        grid = grid_with_occupied((3, 3, 3), [])
        field = edt_3d(grid)
        assert query_distance(field, grid.voxel_center((1, 1, 1))) == np.inf


class TestSnapshot:
    def test_snapshot_immune_to_updates(self):
        grid = single_voxel_grid(center_z=2.0)
        field = edt_3d(grid)
        snap = snapshot(grid, field)
        before = snap.grid.log_odds.copy()
        update_occupancy(grid, DepthImage(np.array([[2.0]])), unit_camera())
        np.testing.assert_array_equal(snap.grid.log_odds, before)
        with pytest.raises(ValueError):
            snap.grid.log_odds[0, 0, 0] = 5.0

    def test_snapshots_idempotent(self):
        grid = single_voxel_grid(center_z=2.0)
        mapper = OccupancyMapper(grid, unit_camera())
        a = mapper.snapshot()
        b = mapper.snapshot()
        np.testing.assert_array_equal(a.grid.log_odds, b.grid.log_odds)
        np.testing.assert_array_equal(a.field.sq, b.field.sq)

    def test_concurrent_updates_do_not_leak_into_snapshot(self):
        scene = classification_scene()
        grid = VoxelGrid(scene["origin"], scene["voxel"], scene["dims"])
        mapper = OccupancyMapper(grid, scene["cam"])
        mapper.update(scene["depth"])
        snap = mapper.snapshot()
        probes = [scene["origin"] + 0.3 + 0.05 * k for k in range(8)]
        serial = [query_distance(snap.field, p) for p in probes]

        stop = threading.Event()

        def writer():
            while not stop.is_set():
                mapper.update(scene["depth"])
                mapper.recompute_edt()

        thread = threading.Thread(target=writer)
        thread.start()
        try:
            for _ in range(50):
                concurrent = [query_distance(snap.field, p) for p in probes]
                assert concurrent == serial
        finally:
            stop.set()
            thread.join()


class TestDepthIo:
    def test_raw_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        img = DepthImage(rng.uniform(0.5, 4.0, size=(6, 9)).astype(np.float32))
        path = tmp_path / "depth.bin"
        write_depth_raw(img, path)
        back = read_depth_raw(path)
        assert back.width == 9 and back.height == 6
        np.testing.assert_array_equal(back.data, img.data)

    def test_png16_millimeters(self, tmp_path):
        from PIL import Image

        raw = np.array([[1500, 0], [250, 4000]], dtype=np.uint16)
        path = tmp_path / "depth.png"
        Image.fromarray(raw).save(path)
        img = read_depth_png16(path)
        np.testing.assert_allclose(img.data, [[1.5, 0.0], [0.25, 4.0]])

    def test_truncated_raises(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x01\x00")
        with pytest.raises(ValueError):
            read_depth_raw(path)


class TestGridDump:
    def test_dump_contains_every_voxel(self, tmp_path):
        grid = grid_with_occupied((2, 2, 2), [(0, 0, 0)])
        field = edt_3d(grid)
        from voxplan.mapping import dump_grid_text

        path = tmp_path / "grid.txt"
        dump_grid_text(grid, path, field)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 1 + 8  # header + voxels
        first = lines[1].split()
        assert first[:4] == ["0", "0", "0", "2"]
