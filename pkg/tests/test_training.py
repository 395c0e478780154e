import logging

import numpy as np
import pytest
import torch

from fenri.exceptions import InvalidArgumentError, NumericFailureError
from fenri.phantom import degrade, ground_truth_volume, simulate_dwi
from fenri.training import (
    QueryBatch, TrainConfig, compute_degree_statistics, evaluate_wmse, gradient_check,
    sample_patch, sample_queries, train)
from fenri.volume import ChannelVolume, VolumeGrid


@pytest.fixture
def pair(rng):
    grid = VolumeGrid((6, 6, 6), 2.0, (-3.0, 0.0, 1.0))
    dwi = ChannelVolume(grid, rng.random(grid.shape + (6,)))
    target = ChannelVolume(grid, rng.normal(scale=0.2, size=grid.shape + (45,)))
    return dwi, target


@pytest.fixture
def batch(pair, rng):
    dwi, target = pair
    patch = sample_patch(dwi, 3, rng)
    return sample_queries(patch, target, 6, rng)


def _short_schedule(**kwargs):
    values = dict(learning_rate=1e-2, batch_queries=32, epochs=1, steps_per_epoch=4,
                  patch_size=4, seed=5, log_interval=2)
    values.update(kwargs)
    return TrainConfig(**values)


class TestStatistics:

    def test_pooled_degree_statistics(self):
        grid = VolumeGrid((2, 2, 2), 1.0)
        data = np.zeros(grid.shape + (45,))
        data[0, :, :, 0] = 1.0
        data[1, :, :, 0] = 3.0
        # No c0: excluded from the statistics
        data[1, 1, 1, 0] = 0.0
        data[1, 1, 1, 1] = 5.0
        means, scales = compute_degree_statistics([ChannelVolume(grid, data)])
        c0 = [1.0] * 4 + [3.0] * 3
        assert means[0] == pytest.approx(np.mean(c0))
        assert scales[0] == pytest.approx(np.std(c0))
        np.testing.assert_allclose(means[1:], 0.0)
        np.testing.assert_allclose(scales[1:], 1.0)

    def test_pools_subjects(self, rng):
        grid = VolumeGrid((3, 3, 3), 1.0)
        first = rng.normal(size=grid.shape + (45,))
        second = rng.normal(loc=2.0, size=grid.shape + (45,))
        means, scales = compute_degree_statistics([ChannelVolume(grid, first),
                                                   ChannelVolume(grid, second)])
        pooled = np.concatenate([first.reshape(-1, 45), second.reshape(-1, 45)])
        assert means[1] == pytest.approx(pooled[:, 1:6].mean())
        assert scales[4] == pytest.approx(pooled[:, 28:45].std())

    def test_empty_inputs(self):
        with pytest.raises(InvalidArgumentError):
            compute_degree_statistics([])
        grid = VolumeGrid((2, 2, 2), 1.0)
        means, scales = compute_degree_statistics([ChannelVolume(grid, np.zeros((2, 2, 2, 45)))])
        np.testing.assert_array_equal(means, 0.0)
        np.testing.assert_array_equal(scales, 1.0)


class TestSampling:

    def test_patch_is_aligned(self, pair, rng):
        dwi, _ = pair
        for _ in range(10):
            patch = sample_patch(dwi, 4, rng)
            assert patch.grid.shape == (4, 4, 4)
            corner = np.round(dwi.grid.world_to_grid(patch.grid.origin)).astype(int)
            window = tuple(slice(c, c + 4) for c in corner)
            np.testing.assert_array_equal(patch.data, dwi.data[window])

    def test_patch_larger_than_volume(self, pair, rng):
        dwi, _ = pair
        patch = sample_patch(dwi, 20, rng)
        assert patch.grid.matches(dwi.grid)

    def test_queries_inside_patch(self, pair, rng):
        dwi, target = pair
        patch = sample_patch(dwi, 3, rng)
        batch = sample_queries(patch, target, 50, rng)
        assert len(batch) == 50
        assert batch.targets.shape == (50, 45)
        assert np.all(batch.points >= patch.grid.lower)
        assert np.all(batch.points <= patch.grid.upper)

    def test_batch_shape_mismatch(self, pair):
        dwi, _ = pair
        with pytest.raises(InvalidArgumentError):
            QueryBatch(dwi, np.zeros((3, 3)), np.zeros((2, 45)))


class TestGradients:

    @pytest.mark.parametrize('seed', range(5))
    def test_smooth_model_matches_central_differences(self, tiny_model, pair, seed):
        dwi, target = pair
        rng = np.random.default_rng(seed)
        batch = sample_queries(sample_patch(dwi, 3, rng), target, 8, rng)
        model = tiny_model(n_blocks=0, hidden_layers=0, seed=seed)
        assert gradient_check(model, batch, n_params=200, seed=seed) < 1e-4

    @pytest.mark.parametrize('seed', range(5))
    def test_full_model_matches_central_differences(self, tiny_model, pair, seed, caplog):
        dwi, target = pair
        rng = np.random.default_rng(seed)
        batch = sample_queries(sample_patch(dwi, 3, rng), target, 8, rng)
        with caplog.at_level(logging.DEBUG, logger='fenri.training'):
            assert gradient_check(tiny_model(seed=seed), batch, n_params=200, seed=seed) < 1e-4
        checked = [record.args[0] for record in caplog.records
                   if record.getMessage().startswith('Gradient check over')]
        assert checked[-1] >= 100

    def test_decoder_only(self, tiny_model, batch):
        model = tiny_model(hidden_layers=0)
        assert gradient_check(model, batch, n_params=100, decoder_only=True) < 1e-4

    def test_check_leaves_model_untouched(self, tiny_model, batch):
        model = tiny_model()
        before = [p.detach().clone() for p in model.parameters()]
        gradient_check(model, batch, n_params=10)
        for old, new in zip(before, model.parameters()):
            assert torch.equal(old, new)


class TestTrain:

    def test_short_run(self, tiny_model, pair):
        model = tiny_model()
        steps = []
        model, history = train(model, [pair], _short_schedule(),
                               callback=lambda step, value: steps.append(step))
        assert len(history) == 4
        assert steps == [0, 1, 2, 3]
        assert np.all(np.isfinite(history))
        assert not model.training
        np.testing.assert_allclose(model.world_normalizer.numpy(),
                                   np.stack([pair[0].grid.lower, pair[0].grid.upper]))

    def test_zero_learning_rate_keeps_parameters(self, tiny_model, pair):
        model = tiny_model(batch_norm=False)
        before = [p.detach().clone() for p in model.parameters()]
        train(model, [pair], _short_schedule(learning_rate=0.0))
        for old, new in zip(before, model.parameters()):
            assert torch.equal(old, new)

    def test_repeatable(self, tiny_model, pair):
        _, first = train(tiny_model(seed=2), [pair], _short_schedule())
        _, second = train(tiny_model(seed=2), [pair], _short_schedule())
        np.testing.assert_allclose(first, second, rtol=1e-12)

    def test_no_steps(self, tiny_model, pair):
        _, history = train(tiny_model(), [pair], _short_schedule(epochs=0))
        assert history == []

    def test_nan_loss(self, tiny_model, pair):
        model = tiny_model()
        with torch.no_grad():
            model.decoder.layers[-1].bias[0] = float('nan')
        with pytest.raises(NumericFailureError):
            train(model, [pair], _short_schedule())

    def test_rejects_mismatched_subjects(self, tiny_model, pair, rng):
        dwi, target = pair
        with pytest.raises(InvalidArgumentError):
            train(tiny_model(in_channels=5), [pair], _short_schedule())
        with pytest.raises(InvalidArgumentError):
            train(tiny_model(), [(dwi, target.select_channels(range(15)))], _short_schedule())
        with pytest.raises(InvalidArgumentError):
            train(tiny_model(), [], _short_schedule())

    def test_learns_single_fiber_phantom(self, tiny_model, straight_phantom, small_scheme):
        low, _ = degrade(simulate_dwi(straight_phantom, small_scheme), small_scheme,
                         target_voxel=2.5)
        truth = ground_truth_volume(straight_phantom)
        model = tiny_model(in_channels=low.channels, latent_channels=8, batch_norm=False)
        model.set_statistics(*compute_degree_statistics([truth]))
        model.set_world_normalizer(low.grid)
        rng = np.random.default_rng(11)
        held = sample_queries(sample_patch(low, 8, rng), truth, 512, rng)

        before = evaluate_wmse(model, held)
        model, history = train(model, [(low, truth)],
                               _short_schedule(epochs=1, steps_per_epoch=200, batch_queries=64,
                                               patch_size=4, log_interval=50))
        assert len(history) == 200
        assert evaluate_wmse(model, held) <= 0.5 * before

    def test_evaluate_wmse(self, tiny_model, batch):
        value = evaluate_wmse(tiny_model(), batch)
        assert np.isfinite(value)
        assert value >= 0.0

    @pytest.mark.parametrize('kwargs', [
        dict(learning_rate=-1.0), dict(batch_queries=0), dict(epochs=-1),
        dict(betas=(0.9, 1.0)), dict(patch_size=0)])
    def test_invalid_schedule(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(**kwargs)
