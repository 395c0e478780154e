import math

import numpy as np
import pytest

from fenri.enums import TerminationReason
from fenri.exceptions import InvalidArgumentError, OutOfDomainError
from fenri.phantom import BundleSpec, Phantom, ground_truth_volume, rotated_kernel
from fenri.tracking import (
    FenriField, Streamline, StreamlineSet, TrackingParams, TrilinearSHField, next_direction,
    track_all, track_from_seed)
from fenri.volume import ChannelVolume, VolumeGrid

CENTER = np.array([5.625, 5.625, 5.625])


@pytest.fixture
def straight_field(straight_phantom):
    return TrilinearSHField(ground_truth_volume(straight_phantom))


@pytest.fixture
def broad_y_field():
    """Constant, broad fODF along y everywhere."""
    grid = VolumeGrid((6, 6, 6), 1.0)
    coeffs = 3.0 * rotated_kernel(2.0, [0.0, 1.0, 0.0])[0]
    return TrilinearSHField(ChannelVolume(grid, np.broadcast_to(coeffs, grid.shape + (45,))))


def _params(**kwargs):
    values = dict(step_size=0.5, max_angle_deg=30.0)
    values.update(kwargs)
    return TrackingParams(**values)


class TestTypes:

    def test_streamline(self):
        line = Streamline([[0, 0, 0], [3, 4, 0], [3, 4, 1]], seed_index=1)
        assert len(line) == 3
        assert line.length == pytest.approx(6.0)
        with pytest.raises(InvalidArgumentError):
            Streamline([[0, 0, 0]], seed_index=2)
        empty = Streamline.empty(TerminationReason.LowAmplitude)
        assert len(empty) == 0
        assert empty.length == 0.0
        assert empty.termination == (TerminationReason.LowAmplitude,) * 2

    def test_streamline_set(self):
        lines = [Streamline([[0, 0, 0], [1, 0, 0]])] * 2
        assert StreamlineSet(lines).seed_ids == [0, 1]
        with pytest.raises(InvalidArgumentError):
            StreamlineSet(lines, seed_ids=[0])

    def test_params_for_voxel(self):
        params = TrackingParams.for_voxel(2.0)
        assert params.step_size == pytest.approx(0.2)
        assert params.max_angle_deg == pytest.approx(6.0)
        assert params.min_length == pytest.approx(10.0)
        assert params.max_length == pytest.approx(200.0)
        custom = TrackingParams.for_voxel(2.0, step_size=1.0, amplitude_cutoff=0.2)
        assert custom.max_angle_deg == pytest.approx(30.0)
        assert custom.amplitude_cutoff == 0.2

    @pytest.mark.parametrize('kwargs', [
        dict(step_size=0.0), dict(max_angle_deg=0.0), dict(max_angle_deg=181.0),
        dict(amplitude_cutoff=-1.0), dict(min_length=5.0, max_length=5.0),
        dict(max_steps=-1)])
    def test_invalid_params(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            _params(**kwargs)


class TestFields:

    def test_trilinear_domain(self, straight_field):
        coeffs, valid = straight_field.odf_many([CENTER, [100.0, 0.0, 0.0]])
        assert list(valid) == [True, False]
        np.testing.assert_array_equal(coeffs[1], 0.0)
        with pytest.raises(OutOfDomainError):
            straight_field.odf([100.0, 0.0, 0.0])

    def test_amplitude(self, straight_field):
        along = straight_field.amplitude(CENTER, [1.0, 0.0, 0.0])
        across = straight_field.amplitude(CENTER, [0.0, 1.0, 0.0])
        assert along > 0.1
        assert along > 3 * abs(across)

    def test_fenri_field(self, tiny_model, rng):
        model = tiny_model()
        grid = VolumeGrid((4, 4, 4), 2.0)
        field = FenriField.from_dwi(model, ChannelVolume(grid, rng.random(grid.shape + (6,))))
        assert field.grid is grid
        coeffs, valid = field.odf_many([[3.0, 3.0, 3.0], [40.0, 0.0, 0.0]])
        assert list(valid) == [True, False]
        assert np.all(np.isfinite(coeffs[0]))
        np.testing.assert_array_equal(coeffs[1], 0.0)

    def test_fenri_field_rejects_latent(self, tiny_model, rng):
        grid = VolumeGrid((4, 4, 4), 2.0)
        with pytest.raises(InvalidArgumentError):
            FenriField(tiny_model(), ChannelVolume(grid, rng.random(grid.shape + (3,))))


class TestNextDirection:

    def test_follows_previous_sign(self, straight_field):
        forward = next_direction(straight_field, CENTER, [1.0, 0.1, 0.0], _params())
        backward = next_direction(straight_field, CENTER, [-1.0, 0.0, 0.1], _params())
        np.testing.assert_allclose(forward, [1.0, 0.0, 0.0], atol=1e-4)
        np.testing.assert_allclose(backward, [-1.0, 0.0, 0.0], atol=1e-4)

    def test_stops_outside(self, straight_field):
        assert next_direction(straight_field, [100.0, 0.0, 0.0], [1.0, 0.0, 0.0], _params()) \
            is None

    def test_stops_on_weak_peak(self, straight_field):
        assert next_direction(straight_field, [5.625, 5.625, 0.0], [1.0, 0.0, 0.0],
                              _params()) is None

    def test_curvature_limit(self, broad_y_field):
        heading = np.array([1.0, 1.0, 0.0]) / math.sqrt(2.0)
        assert next_direction(broad_y_field, [2.5, 2.5, 2.5], heading,
                              _params(max_angle_deg=30.0)) is None
        turned = next_direction(broad_y_field, [2.5, 2.5, 2.5], heading,
                                _params(max_angle_deg=60.0))
        np.testing.assert_allclose(turned, [0.0, 1.0, 0.0], atol=1e-4)


class TestTracking:

    def test_straight_bundle(self, straight_field):
        line = track_from_seed(straight_field, CENTER, _params())
        assert line.length == pytest.approx(12.0)
        np.testing.assert_allclose(line.points[:, 1:], 5.625, atol=1e-3)
        np.testing.assert_allclose(line.points[line.seed_index], CENTER)
        assert line.termination == (TerminationReason.OutOfDomain,) * 2
        steps = np.linalg.norm(np.diff(line.points, axis=0), axis=1)
        np.testing.assert_allclose(steps, 0.5)

    def test_length_budget(self, straight_field):
        line = track_from_seed(straight_field, CENTER, _params(max_length=4.0))
        assert line.length <= 4.0 + 1e-9
        assert TerminationReason.MaxSteps in line.termination

    def test_step_budget(self, straight_field):
        line = track_from_seed(straight_field, CENTER, _params(max_steps=3))
        assert len(line) == 7
        assert line.termination == (TerminationReason.MaxSteps,) * 2

    def test_too_short(self, straight_field):
        line = track_from_seed(straight_field, CENTER, _params(min_length=20.0))
        assert len(line) == 0

    def test_bad_seeds(self, straight_field):
        weak = track_from_seed(straight_field, [5.625, 5.625, 0.0], _params())
        assert len(weak) == 0
        assert weak.termination[0] is TerminationReason.LowAmplitude
        outside = track_from_seed(straight_field, [100.0, 0.0, 0.0], _params())
        assert outside.termination[0] is TerminationReason.OutOfDomain

    def test_track_all_keeps_seed_order(self, straight_field):
        seeds = np.array([CENTER, [5.625, 5.625, 0.0], CENTER + [0, 0.5, 0],
                          CENTER + [2.0, 0.0, 0.5]])
        lines = track_all(straight_field, seeds, _params())
        assert lines.seed_ids == [0, 2, 3]
        for line, seed_id in zip(lines, lines.seed_ids):
            np.testing.assert_allclose(line.points[line.seed_index], seeds[seed_id])

    def test_worker_count_does_not_matter(self, straight_field, rng):
        seeds = CENTER + rng.uniform(-1.5, 1.5, (9, 3))
        single = track_all(straight_field, seeds, _params(), workers=1, chunk=2)
        pooled = track_all(straight_field, seeds, _params(), workers=3, chunk=2)
        assert single.seed_ids == pooled.seed_ids
        for a, b in zip(single, pooled):
            np.testing.assert_array_equal(a.points, b.points)

    def test_no_seeds(self, straight_field):
        assert len(track_all(straight_field, np.zeros((0, 3)), _params())) == 0

    def test_mirrored_seeds_give_mirrored_tracks(self):
        grid = VolumeGrid((12, 12, 12), 1.25)
        middle = 6.875
        arc = BundleSpec([[-2.0, 3.0, middle], [middle, 10.0, middle], [15.75, 3.0, middle]],
                         3.0, name='arc')
        field = TrilinearSHField(ground_truth_volume(Phantom(grid, [arc])))
        flip = np.array([-1.0, 1.0, 1.0])
        shift = np.array([2.0 * middle, 0.0, 0.0])
        seeds = np.array([[5.5, 9.2, 7.2], [3.0, 8.0, 6.5], [6.0, 9.6, middle]])
        params = _params(max_length=200.0)

        for seed in seeds:
            line = track_from_seed(field, seed, params)
            twin = track_from_seed(field, seed * flip + shift, params)
            assert len(line) > 10
            reflected = line.points * flip + shift
            if np.linalg.norm(reflected[0] - twin.points[0]) \
                    > np.linalg.norm(reflected[0] - twin.points[-1]):
                reflected = reflected[::-1]
            assert reflected.shape == twin.points.shape
            np.testing.assert_allclose(reflected, twin.points, atol=1e-3)
