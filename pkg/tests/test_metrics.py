import math

import numpy as np
import pytest

from fenri.const import WAAE_PENALTY
from fenri.exceptions import InvalidArgumentError
from fenri.metrics import (
    OdfScoreReport, TractScoreReport, jensen_shannon, match_peaks, msjsd, msjsd_map,
    odf_densities, score_odf_volumes, threshold_mask, tract_scores, tract_table,
    voxel_angular_error, voxelize, waae)
from fenri.phantom import ground_truth_volume
from fenri.shcore import PeakSet, standard_sphere
from fenri.tracking import Streamline, StreamlineSet
from fenri.volume import ChannelVolume, VolumeGrid


def _line(start, end, spacing=0.5):
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    count = int(round(np.linalg.norm(end - start) / spacing)) + 1
    return Streamline(np.linspace(start, end, count))


@pytest.fixture
def truth(crossing_phantom):
    return ground_truth_volume(crossing_phantom)


class TestDivergence:

    def test_identical(self, rng):
        p = rng.random((5, 10))
        p /= p.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(jensen_shannon(p, p), 0.0, atol=1e-12)

    def test_disjoint(self):
        assert jensen_shannon(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(1.0)

    def test_densities(self, kernel):
        dirs = standard_sphere('symmetric362')
        densities = odf_densities(np.stack([kernel([0, 0, 1]), np.zeros(45)]), dirs)
        np.testing.assert_allclose(densities.sum(axis=1), 1.0)
        assert np.all(densities >= 0)
        np.testing.assert_allclose(densities[1], 1.0 / 362)

    def test_msjsd_identical(self, truth):
        assert msjsd(truth, truth) == pytest.approx(0.0, abs=1e-12)

    def test_msjsd_is_symmetric(self, truth, rng):
        noise = rng.normal(scale=0.05, size=truth.data.shape)
        noisy = ChannelVolume(truth.grid, truth.data + noise)
        mask = threshold_mask(truth, 0.01)
        assert msjsd(noisy, truth, mask=mask) == msjsd(truth, noisy, mask=mask)
        assert msjsd(noisy, truth) > 0.0

    def test_msjsd_map_masked(self, truth, rng):
        noisy = ChannelVolume(truth.grid, truth.data + rng.normal(scale=0.05, size=truth.data.shape))
        mask = threshold_mask(truth, 0.01)
        values = msjsd_map(noisy, truth, mask=mask)
        assert np.all(values[~mask] == 0.0)
        assert np.all(values[mask] > 0.0)
        assert np.all(values <= 1.0)
        assert msjsd(noisy, truth, mask=mask) == pytest.approx(values[mask].mean())


class TestAngularError:

    def test_no_peaks(self):
        empty = PeakSet(np.zeros((0, 3)), np.zeros(0))
        assert voxel_angular_error(empty, empty) == 0.0

    def test_missed_peak(self):
        target = PeakSet([[1.0, 0.0, 0.0]], [1.0])
        empty = PeakSet(np.zeros((0, 3)), np.zeros(0))
        assert voxel_angular_error(target, empty) == pytest.approx(WAAE_PENALTY)
        assert voxel_angular_error(empty, target) == pytest.approx(WAAE_PENALTY)
        assert WAAE_PENALTY == pytest.approx(0.011467, abs=1e-6)

    def test_rotated_peak(self):
        angle = math.radians(10.0)
        target = PeakSet([[1.0, 0.0, 0.0]], [1.0])
        pred = PeakSet([[math.cos(angle), math.sin(angle), 0.0]], [0.8])
        assert voxel_angular_error(target, pred) == pytest.approx(angle)

    def test_antipodes_match(self):
        target = PeakSet([[1.0, 0.0, 0.0]], [1.0])
        pred = PeakSet([[-1.0, 0.0, 0.0]], [1.0])
        assert voxel_angular_error(target, pred) == pytest.approx(0.0, abs=1e-7)

    def test_half_missed_crossing(self):
        target = PeakSet([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [0.6, 0.4])
        pred = PeakSet([[1.0, 0.0, 0.0]], [1.0])
        # The miss is weighted like the mean matched peak
        assert voxel_angular_error(target, pred) == pytest.approx(WAAE_PENALTY / 2.0)

    def test_extra_peaks_beyond_target_count_are_free(self):
        target = PeakSet([[1.0, 0.0, 0.0]], [1.0])
        pred = PeakSet([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]], [0.9, 0.2, 0.1])
        assert voxel_angular_error(target, pred) == pytest.approx(0.0, abs=1e-7)

    def test_greedy_matching(self):
        target = [[1.0, 0.0, 0.0], [0.9, 0.1, 0.0]]
        pred = [[0.0, 1.0, 0.0], [1.0, 0.05, 0.0]]
        assert match_peaks(target, pred) == [(0, 1), (1, 0)]
        assert match_peaks(target, np.zeros((0, 3))) == []

    def test_waae_ignores_common_scaling(self, kernel):
        grid = VolumeGrid((2, 2, 2), 1.0)
        angle = math.radians(12.0)
        single = kernel([1.0, 0.0, 0.0], kappa=8.0)
        crossing = 0.6 * single + 0.4 * kernel([0.0, 1.0, 0.0], kappa=8.0)
        tilted = kernel([math.cos(angle), math.sin(angle), 0.0], kappa=8.0)
        target = np.stack([single, crossing] * 4).reshape(grid.shape + (45,))
        pred = np.stack([tilted, single] * 4).reshape(grid.shape + (45,))
        base = waae(ChannelVolume(grid, pred), ChannelVolume(grid, target))
        assert base > 0.0
        for factor in (0.5, 2.0):
            scaled = waae(ChannelVolume(grid, factor * pred), ChannelVolume(grid, factor * target))
            assert scaled == pytest.approx(base, abs=1e-6)

    def test_waae_identical(self, truth):
        mask = threshold_mask(truth, 0.01)
        assert waae(truth, truth, mask=mask) == pytest.approx(0.0, abs=1e-6)


class TestOdfScores:

    def test_identical_volumes(self, truth):
        report = score_odf_volumes(truth, truth, mask_threshold=0.01, with_maps=True)
        assert report.wmse == pytest.approx(0.0)
        assert report.msjsd == pytest.approx(0.0, abs=1e-12)
        assert report.waae == pytest.approx(0.0, abs=1e-6)
        assert report.voxels == int(threshold_mask(truth, 0.01).sum())
        assert set(report.maps) == {'msjsd', 'waae'}

    def test_degree_scales(self, truth):
        shifted = ChannelVolume(truth.grid, truth.data + 0.1)
        plain = score_odf_volumes(shifted, truth)
        scaled = score_odf_volumes(shifted, truth, degree_scales=np.full(5, 2.0))
        assert plain.wmse == pytest.approx(0.01)
        assert scaled.wmse == pytest.approx(0.0025)

    def test_report_text(self):
        report = OdfScoreReport(0.5, 0.25, 0.125, voxels=10)
        assert report.as_tsv() == "wmse\tmsjsd\twaae\tvoxels\n0.5\t0.25\t0.125\t10\n"
        assert "msjsd: 0.25" in report.as_text()

    def test_rejects_mismatch(self, truth, sh_volume):
        with pytest.raises(InvalidArgumentError):
            score_odf_volumes(sh_volume, truth)
        with pytest.raises(InvalidArgumentError):
            score_odf_volumes(truth, truth, mask=np.zeros(truth.grid.shape))
        with pytest.raises(InvalidArgumentError):
            score_odf_volumes(truth.select_channels(range(15)), truth)


class TestTractScores:

    @pytest.fixture
    def row_mask(self):
        grid = VolumeGrid((10, 4, 4), 1.0)
        data = np.zeros(grid.shape)
        data[:, 1, 1] = 1.0
        return ChannelVolume(grid, data)

    def test_voxelize_fills_long_steps(self, row_mask):
        covered = voxelize(StreamlineSet([Streamline([[0.0, 2.0, 2.0], [5.0, 2.0, 2.0]])]),
                           row_mask.grid)
        assert covered.sum() == 6
        assert np.all(covered[:6, 2, 2])

    def test_voxelize_clips_outside(self, row_mask):
        covered = voxelize(StreamlineSet([_line([-5.0, 1.0, 1.0], [3.0, 1.0, 1.0])]),
                           row_mask.grid)
        assert covered.sum() == 4

    def test_perfect_bundle(self, row_mask):
        report = tract_scores(StreamlineSet([_line([0.0, 1.0, 1.0], [9.0, 1.0, 1.0])]), row_mask,
                              'row')
        assert (report.ol, report.or_, report.dice) == (1.0, 0.0, 1.0)
        assert report.bundle == 'row'
        assert report.streamlines == 1

    def test_halo(self, row_mask):
        lines = StreamlineSet([_line([0.0, 1.0, 1.0], [9.0, 1.0, 1.0]),
                               _line([0.0, 2.0, 1.0], [9.0, 2.0, 1.0])])
        report = tract_scores(lines, row_mask)
        assert report.ol == pytest.approx(1.0)
        assert report.or_ == pytest.approx(1.0)
        assert report.dice == pytest.approx(2.0 / 3.0)

    def test_empty_inputs(self, row_mask):
        report = tract_scores(StreamlineSet(), row_mask)
        assert (report.ol, report.or_, report.dice) == (0.0, 0.0, 0.0)
        empty = ChannelVolume(row_mask.grid, np.zeros(row_mask.grid.shape))
        with pytest.raises(InvalidArgumentError):
            tract_scores(StreamlineSet([_line([0, 1, 1], [9, 1, 1])]), empty)

    def test_table(self):
        table = tract_table([TractScoreReport(1.0, 0.5, 0.8, 'a', 3)])
        assert table == "bundle\tstreamlines\tol\tor\tdice\na\t3\t1.0\t0.5\t0.8\n"
