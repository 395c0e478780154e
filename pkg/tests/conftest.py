"""
Shared fixtures: small grids, phantoms, SH volumes and tiny models.
"""

import logging

import numpy as np
import pytest
import torch

from fenri.field import DecoderConfig, EncoderConfig, build_model
from fenri.phantom import BundleSpec, Phantom, default_scheme, rotated_kernel
from fenri.volume import ChannelVolume, VolumeGrid


@pytest.fixture(autouse=True)
def _restore_root_logging():
    """Undo the root level and handler filters that ``main`` installs via ``fenri.logger.apply``."""
    root = logging.getLogger('')
    level = root.level
    filters = {handler: list(handler.filters) for handler in root.handlers}
    yield
    root.setLevel(level)
    for handler, saved in filters.items():
        handler.filters[:] = saved


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid():
    return VolumeGrid((6, 5, 4), 1.5, (1.0, -2.0, 0.5))


@pytest.fixture
def sh_volume(small_grid, rng):
    return ChannelVolume(small_grid, rng.normal(size=small_grid.shape + (45,)))


@pytest.fixture
def straight_phantom():
    """One bundle along x through the middle of a 10^3 grid of 1.25 mm voxels."""
    grid = VolumeGrid((10, 10, 10), 1.25)
    bundle = BundleSpec([[-2.0, 5.625, 5.625], [14.0, 5.625, 5.625]], 3.0, name='straight')
    return Phantom(grid, [bundle])


@pytest.fixture
def crossing_phantom():
    """Two perpendicular bundles crossing in the middle of a 12^3 grid."""
    grid = VolumeGrid((12, 12, 12), 1.25)
    along_x = BundleSpec([[-2.0, 6.875, 6.875], [16.0, 6.875, 6.875]], 3.0, name='x')
    along_y = BundleSpec([[6.875, -2.0, 6.875], [6.875, 16.0, 6.875]], 3.0, name='y')
    return Phantom(grid, [along_x, along_y])


@pytest.fixture
def small_scheme():
    return default_scheme(n_b0=2, shells=(1000.0, 3000.0), per_shell=12, seed=0)


@pytest.fixture
def kernel():
    """SH coefficients of a unit-mass Watson density along an axis."""
    def _kernel(axis, kappa=20.0):
        axis = np.asarray(axis, dtype=np.float64)
        return rotated_kernel(kappa, axis / np.linalg.norm(axis))[0]
    return _kernel


@pytest.fixture
def tiny_model():
    """Float64 model small enough for finite differences."""
    def _tiny_model(in_channels=6, latent_channels=4, n_blocks=1, hidden_layers=1,
                    hidden_width=16, frequencies=2, batch_norm=True, seed=0):
        encoder = EncoderConfig(in_channels, latent_channels, n_blocks, kernel=3, pool_kernel=2,
                                batch_norm_at_output=batch_norm, units_per_block=1)
        decoder = DecoderConfig(hidden_layers, hidden_width, frequencies)
        return build_model(encoder, decoder, seed=seed, dtype=torch.float64)
    return _tiny_model


@pytest.fixture(scope='session')
def tiny_settings():
    """Overrides for an 8^3 phantom pipeline that runs in seconds."""
    def _tiny_settings(run_dir, seed=7):
        center = 4.375
        return {
            'run.output': str(run_dir),
            'run.seed': seed,
            'phantom.shape': [8, 8, 8],
            'phantom.subjects': 2,
            'phantom.jitter': 0.5,
            'phantom.streamlines': 6,
            'phantom.bundles': [{'name': 'straight',
                                 'points': [[-2.0, center, center], [11.0, center, center]],
                                 'radius': 2.5}],
            'scheme.b0': 1,
            'scheme.shells': [1000],
            'scheme.directions': 12,
            'degrade.keep_b0': 1,
            'degrade.keep_per_shell': 12,
            'degrade.voxel_size': 2.5,
            'model.latent_channels': 4,
            'model.n_blocks': 1,
            'model.units_per_block': 1,
            'model.hidden_layers': 1,
            'model.hidden_width': 8,
            'model.frequencies': 1,
            'training.subjects': [0],
            'training.batch_queries': 16,
            'training.patch_size': 2,
            'training.epochs': 1,
            'training.steps_per_epoch': 2,
            'training.log_interval': 1,
            'predict.subjects': [1],
        }
    return _tiny_settings
