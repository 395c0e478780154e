import numpy as np
import pytest

from fenri.exceptions import InvalidArgumentError, OutOfDomainError
from fenri.volume import (
    ChannelVolume, VolumeGrid, block_downsample, ensemble_arrays, local_ensemble,
    resample_volume, trilinear_sample, trilinear_sample_many, world_to_grid)


def _affine_volume(grid, slope, offset):
    values = grid.voxel_centers() @ np.asarray(slope).T + offset
    return ChannelVolume(grid, values.reshape(grid.shape + (len(offset),)))


def _interior_points(grid, rng, count):
    return grid.lower + rng.random((count, 3)) * (grid.upper - grid.lower)


class TestVolumeGrid:

    def test_coordinates(self, small_grid):
        np.testing.assert_allclose(small_grid.grid_to_world([1, 2, 3]), [2.5, 1.0, 5.0])
        np.testing.assert_allclose(world_to_grid(small_grid, [2.5, 1.0, 5.0]), [1, 2, 3])
        np.testing.assert_allclose(small_grid.upper, [8.5, 4.0, 5.0])
        np.testing.assert_allclose(small_grid.fov_lower, [0.25, -2.75, -0.25])
        assert small_grid.n_voxels == 120

    def test_voxel_centers_c_order(self, small_grid):
        centers = small_grid.voxel_centers()
        assert centers.shape == (120, 3)
        np.testing.assert_allclose(centers[1], small_grid.grid_to_world([0, 0, 1]))
        np.testing.assert_allclose(centers[4], small_grid.grid_to_world([0, 1, 0]))

    def test_rejects_degenerate(self):
        with pytest.raises(InvalidArgumentError):
            VolumeGrid((1, 4, 4), 1.0)
        with pytest.raises(InvalidArgumentError):
            VolumeGrid((4, 4, 4), 0.0)

    def test_contains_margin(self, small_grid):
        inside = small_grid.lower - 0.49 * small_grid.voxel_size
        outside = small_grid.upper + 0.51 * small_grid.voxel_size
        assert list(small_grid.contains([inside, outside])) == [True, False]

    def test_downsampled(self):
        grid = VolumeGrid((24, 24, 24), 1.25)
        coarse = grid.downsampled(1.6)
        assert coarse.shape == (15, 15, 15)
        np.testing.assert_allclose(coarse.voxel_size, 2.0)
        np.testing.assert_allclose(coarse.origin, 0.375)
        np.testing.assert_allclose(coarse.fov_lower, grid.fov_lower)

    def test_from_affine(self):
        affine = np.diag([2.0, 2.0, 2.0, 1.0])
        affine[:3, 3] = [-10.0, 4.0, 1.0]
        grid = VolumeGrid.from_affine((4, 5, 6), affine)
        np.testing.assert_allclose(grid.voxel_size, 2.0)
        np.testing.assert_allclose(grid.origin, [-10.0, 4.0, 1.0])
        assert grid.matches(VolumeGrid((4, 5, 6), 2.0, (-10.0, 4.0, 1.0)))


class TestChannelVolume:

    def test_promotes_3d(self, small_grid):
        volume = ChannelVolume(small_grid, np.zeros(small_grid.shape))
        assert volume.channels == 1
        assert volume.data.shape == small_grid.shape + (1,)

    def test_read_only(self, sh_volume):
        with pytest.raises(ValueError):
            sh_volume.data[0, 0, 0, 0] = 1.0

    def test_rejects_bad_data(self, small_grid):
        with pytest.raises(InvalidArgumentError):
            ChannelVolume(small_grid, np.zeros((2, 2, 2, 1)))
        data = np.zeros(small_grid.shape + (2,))
        data[0, 0, 0, 1] = np.nan
        with pytest.raises(InvalidArgumentError):
            ChannelVolume(small_grid, data)

    def test_select_channels(self, sh_volume):
        subset = sh_volume.select_channels([3, 0])
        np.testing.assert_array_equal(subset.data[..., 1], sh_volume.data[..., 0])
        with pytest.raises(InvalidArgumentError):
            sh_volume.select_channels([45])


class TestInterpolation:

    def test_partition_of_unity(self, small_grid, rng):
        points = small_grid.fov_lower + rng.random((1000, 3)) \
            * (small_grid.fov_upper - small_grid.fov_lower)
        indices, weights = ensemble_arrays(small_grid, points)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(weights >= 0)
        assert np.all(indices >= 0)
        assert np.all(indices < np.array(small_grid.shape))

    def test_affine_reproduction(self, small_grid, rng):
        slope = [[0.5, -1.0, 2.0], [0.0, 3.0, 0.25]]
        volume = _affine_volume(small_grid, slope, [1.0, -2.0])
        points = _interior_points(small_grid, rng, 1000)
        expected = points @ np.asarray(slope).T + [1.0, -2.0]
        np.testing.assert_allclose(trilinear_sample_many(volume, points), expected, atol=1e-9)

    def test_exact_at_voxel_centers(self, sh_volume):
        center = sh_volume.grid.grid_to_world([2, 3, 1])
        np.testing.assert_allclose(trilinear_sample(sh_volume, center), sh_volume.data[2, 3, 1],
                                   atol=1e-12)
        ensemble = local_ensemble(sh_volume.grid, center)
        assert ensemble.weights.max() == pytest.approx(1.0)

    def test_continuous_across_faces(self, sh_volume, rng):
        grid = sh_volume.grid
        for _ in range(100):
            coords = rng.random(3) * (np.array(grid.shape) - 1)
            axis = rng.integers(3)
            coords[axis] = rng.integers(1, grid.shape[axis] - 1)
            below = coords.copy()
            above = coords.copy()
            below[axis] -= 1e-7
            above[axis] += 1e-7
            left = trilinear_sample(sh_volume, grid.grid_to_world(below))
            right = trilinear_sample(sh_volume, grid.grid_to_world(above))
            assert np.abs(left - right).max() < 1e-5

    def test_clamped_margin(self, sh_volume):
        grid = sh_volume.grid
        edge = grid.lower - 0.4 * grid.voxel_size
        np.testing.assert_allclose(trilinear_sample(sh_volume, edge), sh_volume.data[0, 0, 0])

    def test_extrapolated_margin(self, small_grid, rng):
        slope = [[0.5, -1.0, 2.0]]
        volume = _affine_volume(small_grid, slope, [1.0])
        points = small_grid.fov_lower + rng.random((500, 3)) \
            * (small_grid.fov_upper - small_grid.fov_lower)
        _, weights = ensemble_arrays(small_grid, points, extrapolate=True)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)
        expected = points @ np.asarray(slope).T + 1.0
        np.testing.assert_allclose(trilinear_sample_many(volume, points, extrapolate=True),
                                   expected, atol=1e-9)

    def test_out_of_domain(self, sh_volume):
        far = sh_volume.grid.upper + sh_volume.grid.voxel_size
        with pytest.raises(OutOfDomainError):
            trilinear_sample(sh_volume, far)
        clamped = trilinear_sample_many(sh_volume, far, clamp=True)[0]
        np.testing.assert_allclose(clamped, sh_volume.data[-1, -1, -1])

    def test_ensemble_centers(self, small_grid):
        point = small_grid.grid_to_world([1.25, 2.5, 0.75])
        ensemble = local_ensemble(small_grid, point)
        assert ensemble.indices[0].tolist() == [1, 2, 0]
        np.testing.assert_allclose(ensemble.centers, small_grid.grid_to_world(ensemble.indices))
        assert ensemble.weights.sum() == pytest.approx(1.0)
        assert len(list(ensemble)) == 8


class TestResampling:

    def test_resample_affine_field(self, rng):
        coarse = VolumeGrid((6, 6, 6), 2.0)
        fine = VolumeGrid((9, 9, 9), 1.25, (0.0, 0.0, 0.0))
        volume = _affine_volume(coarse, [[1.0, 2.0, -1.0]], [0.5])
        resampled = resample_volume(volume, fine)
        expected = fine.voxel_centers() @ np.array([1.0, 2.0, -1.0]) + 0.5
        np.testing.assert_allclose(resampled.data.reshape(-1), expected, atol=1e-9)

    def test_resample_disjoint(self, sh_volume):
        far = VolumeGrid((4, 4, 4), 1.0, (100.0, 100.0, 100.0))
        with pytest.raises(InvalidArgumentError):
            resample_volume(sh_volume, far)

    def test_block_downsample_constant(self):
        grid = VolumeGrid((8, 8, 8), 1.0)
        volume = ChannelVolume(grid, np.full(grid.shape + (2,), 3.5))
        coarse = block_downsample(volume, 2.0)
        assert coarse.grid.shape == (4, 4, 4)
        np.testing.assert_allclose(coarse.data, 3.5)

    def test_block_downsample_ramp(self):
        grid = VolumeGrid((24, 24, 24), 1.25)
        volume = _affine_volume(grid, [[1.0, 0.0, 0.0]], [0.0])
        coarse = block_downsample(volume, 1.6)
        assert coarse.grid.shape == (15, 15, 15)
        x = coarse.grid.voxel_centers()[:, 0].reshape(coarse.grid.shape)
        np.testing.assert_allclose(coarse.data[..., 0], x, atol=1e-6)

    def test_block_downsample_affine_up_to_edges(self):
        grid = VolumeGrid((10, 9, 12), (1.0, 1.0, 1.0), origin=(-3.0, 2.0, 0.5))
        slope = [[0.5, -1.0, 2.0], [0.0, 3.0, 0.25]]
        volume = _affine_volume(grid, slope, [1.0, -2.0])
        coarse = block_downsample(volume, 2.5)
        expected = coarse.grid.voxel_centers() @ np.asarray(slope).T + [1.0, -2.0]
        np.testing.assert_allclose(coarse.data.reshape(-1, 2), expected, atol=1e-6)

    def test_block_downsample_identity_and_errors(self, sh_volume):
        same = block_downsample(sh_volume, 1.0)
        np.testing.assert_array_equal(same.data, sh_volume.data)
        with pytest.raises(InvalidArgumentError):
            block_downsample(sh_volume, 0.5)
