import numpy as np
import pytest

from touchseg.errors import InvalidInput
from touchseg.geometry import (
    CameraIntrinsics,
    VoxelGrid,
    deproject,
    filter_training_mask,
    frame_interaction_mask,
    mark_interacted,
    temporal_or,
)


@pytest.fixture
def intr():
    return CameraIntrinsics(fx=50.0, fy=50.0, cx=15.5, cy=11.5, width=32, height=24)


@pytest.fixture
def grid():
    return VoxelGrid(origin=np.array([-0.5, -0.5, -0.5]), voxel_size=0.03, dims=(34, 34, 34))


def brute_force_mark(grid, hand, radius):
    """Reference: scan every voxel center."""
    ii, jj, kk = np.meshgrid(*[np.arange(d) for d in grid.dims], indexing="ij")
    idx = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
    centers = grid.origin + (idx + 0.5) * grid.voxel_size
    near = np.linalg.norm(centers - np.asarray(hand), axis=1) <= radius
    out = np.zeros(grid.dims, dtype=bool)
    sel = idx[near]
    out[sel[:, 0], sel[:, 1], sel[:, 2]] = True
    return out


class TestIntrinsics:
    def test_validation(self):
        with pytest.raises(InvalidInput):
            CameraIntrinsics(fx=-1, fy=1, cx=0, cy=0, width=4, height=4)
        with pytest.raises(InvalidInput):
            CameraIntrinsics(fx=1, fy=1, cx=9, cy=0, width=4, height=4)


class TestDeproject:
    def test_principal_ray(self, intr):
        depth = np.zeros((24, 32))
        # cx, cy land between pixels; use an intrinsics with integer center
        intr2 = CameraIntrinsics(fx=50.0, fy=50.0, cx=16.0, cy=12.0, width=32, height=24)
        depth[12, 16] = 0.7
        pts, valid = deproject(depth, intr2, np.eye(4))
        assert valid[12, 16]
        assert np.allclose(pts[12, 16], [0.0, 0.0, 0.7], atol=1e-12)

    def test_one_focal_length_off_center(self):
        intr2 = CameraIntrinsics(fx=50.0, fy=50.0, cx=16.0, cy=12.0, width=80, height=24)
        depth = np.zeros((24, 80))
        d = 1.3
        depth[12, 66] = d  # u = cx + fx
        pts, _ = deproject(depth, intr2, np.eye(4))
        assert np.allclose(pts[12, 66], [d, 0.0, d], atol=1e-9)

    def test_invalid_depth_yields_no_point(self, intr):
        depth = np.zeros((24, 32))
        pts, valid = deproject(depth, intr, np.eye(4))
        assert not valid.any()

    def test_pose_applied(self):
        intr2 = CameraIntrinsics(fx=50.0, fy=50.0, cx=16.0, cy=12.0, width=32, height=24)
        depth = np.zeros((24, 32))
        depth[12, 16] = 1.0
        pose = np.eye(4)
        pose[:3, 3] = [1.0, 2.0, 3.0]
        pts, _ = deproject(depth, intr2, pose)
        assert np.allclose(pts[12, 16], [1.0, 2.0, 4.0])

    def test_shape_mismatch(self, intr):
        with pytest.raises(InvalidInput):
            deproject(np.zeros((5, 5)), intr, np.eye(4))


class TestMarkInteracted:
    def test_center_hit(self, grid):
        hand = grid.voxel_centers(np.array([10, 10, 10]))
        mark_interacted(grid, hand, radius=0.05)
        assert grid.interacted[10, 10, 10]

    def test_far_voxel_unmarked(self, grid):
        hand = grid.voxel_centers(np.array([10, 10, 10]))
        mark_interacted(grid, hand, radius=0.05)
        far = grid.voxel_centers(np.array([10, 10, 13]))  # 0.09 m away
        assert np.linalg.norm(far - hand) > 0.05
        assert not grid.interacted[10, 10, 13]

    def test_matches_brute_force(self, rng, grid):
        for _ in range(8):
            hand = rng.uniform(-0.6, 0.6, 3)
            radius = float(rng.uniform(0.02, 0.12))
            g = grid.copy()
            g.interacted[:] = False
            mark_interacted(g, hand, radius)
            assert np.array_equal(g.interacted, brute_force_mark(grid, hand, radius))

    def test_union_of_two_hands(self, rng, grid):
        h1, h2 = rng.uniform(-0.4, 0.4, (2, 3))
        a = grid.copy()
        mark_interacted(a, h1)
        b = grid.copy()
        mark_interacted(b, h2)
        both = grid.copy()
        mark_interacted(mark_interacted(both, h1), h2)
        assert np.array_equal(both.interacted, a.interacted | b.interacted)

    def test_idempotent(self, rng, grid):
        hand = rng.uniform(-0.3, 0.3, 3)
        mark_interacted(grid, hand)
        once = grid.interacted.copy()
        mark_interacted(grid, hand)
        assert np.array_equal(grid.interacted, once)

    def test_out_of_grid_sphere_marks_nothing(self, grid):
        mark_interacted(grid, np.array([10.0, 10.0, 10.0]), radius=0.05)
        assert not grid.interacted.any()

    def test_bad_radius(self, grid):
        with pytest.raises(InvalidInput):
            mark_interacted(grid, np.zeros(3), radius=0.0)


class TestVoxelLookupRoundTrip:
    def test_deprojected_point_maps_back_to_its_voxel(self, rng, grid):
        intr = CameraIntrinsics(fx=40.0, fy=40.0, cx=16.0, cy=12.0, width=32, height=24)
        depth = rng.uniform(0.2, 0.45, (24, 32))
        pts, valid = deproject(depth, intr, np.eye(4))
        idx, inb = grid.point_to_index(pts[valid])
        sel = idx[inb]
        centers = grid.voxel_centers(sel)
        # every point lies inside the voxel its index names
        assert (np.abs(pts[valid][inb] - centers) <= grid.voxel_size / 2 + 1e-12).all()

    def test_out_of_bounds_not_interacted(self, grid):
        grid.interacted[:] = True
        outside = np.array([[9.0, 9.0, 9.0]])
        assert not grid.is_interacted(outside)[0]


class TestFrameMask:
    def test_pixels_in_marked_voxels(self, grid):
        intr = CameraIntrinsics(fx=40.0, fy=40.0, cx=16.0, cy=12.0, width=32, height=24)
        depth = np.full((24, 32), 0.4)
        depth[0, 0] = 0.0  # invalid pixel
        pts, _ = deproject(depth, intr, np.eye(4))
        target = pts[12, 16]
        mark_interacted(grid, target, radius=0.02)
        mask = frame_interaction_mask(depth, intr, np.eye(4), grid)
        assert mask[12, 16]
        assert not mask[0, 0]
        idx, _ = grid.point_to_index(pts[mask])
        assert grid.interacted[idx[:, 0], idx[:, 1], idx[:, 2]].all()

    def test_unmarked_voxel_pixel_is_zero(self, grid):
        intr = CameraIntrinsics(fx=40.0, fy=40.0, cx=16.0, cy=12.0, width=32, height=24)
        depth = np.full((24, 32), 0.4)
        mask = frame_interaction_mask(depth, intr, np.eye(4), grid)
        assert not mask.any()


class TestTemporalOr:
    def test_or_identity(self, rng):
        a = rng.random((6, 6)) < 0.3
        masks = [a] + [np.zeros((6, 6), dtype=bool)] * 4
        assert np.array_equal(temporal_or(masks), a)

    def test_any_frame_sets_pixel(self, rng):
        masks = [rng.random((5, 5)) < 0.2 for _ in range(5)]
        out = temporal_or(masks)
        for m in masks:
            assert (out | m == out).all()  # superset of every input

    def test_wrong_count_rejected(self, rng):
        m = [np.zeros((3, 3), dtype=bool)] * 4
        with pytest.raises(InvalidInput):
            temporal_or(m)
        with pytest.raises(InvalidInput):
            temporal_or(m + m)

    def test_shape_mismatch_rejected(self):
        masks = [np.zeros((3, 3), dtype=bool)] * 4 + [np.zeros((2, 2), dtype=bool)]
        with pytest.raises(InvalidInput):
            temporal_or(masks)


class TestFilterTrainingMask:
    def test_keeps_plant_predictions(self):
        m_prime = np.array([[1, 1, 0]], dtype=bool)
        predicted = np.array([[0, 2, 0]])
        out = filter_training_mask(m_prime, predicted, plant_class=0)
        assert out.tolist() == [[True, False, False]]

    def test_subset_of_m_prime(self, rng):
        m_prime = rng.random((8, 8)) < 0.5
        predicted = rng.integers(0, 3, (8, 8))
        out = filter_training_mask(m_prime, predicted, 0)
        assert not (out & ~m_prime).any()

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInput):
            filter_training_mask(np.zeros((2, 2), dtype=bool), np.zeros((3, 3), dtype=int), 0)
