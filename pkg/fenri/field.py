"""
Continuous fODF field: a convolutional encoder producing one latent vector
per input voxel and an MLP decoder queried at arbitrary world positions.

A query ``q`` is answered by decoding each of the 8 latent vectors of its
local ensemble together with the normalised voxel center, the normalised
query and a Fourier encoding of their offset, then blending the 8 outputs
with the trilinear weights of the ensemble.

The decoder works in standardised SH units, ``(c - mean_l) / scale_l`` per
degree ``l``; every public entry point returns raw SH coefficients.
"""

import logging
import math
import threading
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from fenri.const import SH_COEFFS
from fenri.exceptions import InvalidArgumentError
from fenri.shcore import lmax_for, sh_order_indices
from fenri.volume import ChannelVolume, VolumeGrid, ensemble_arrays

_LOGGER = logging.getLogger(__name__)

# Largest float64 below 1; offsets are clamped into [0, OFFSET_MAX]
OFFSET_MAX = math.nextafter(1.0, 0.0)

# Queries decoded per batch by predict_points / predict_volume
PREDICT_CHUNK = 8192


class EncoderConfig(object):
    """Shape of the convolutional encoder."""

    def __init__(self, in_channels: int, latent_channels: int = 32, n_blocks: int = 3,
                 kernel: int = 3, pool_kernel: int = 2, batch_norm_at_output: bool = True,
                 units_per_block: int = 3):
        for name, value in (('in_channels', in_channels),
                            ('latent_channels', latent_channels),
                            ('kernel', kernel),
                            ('pool_kernel', pool_kernel),
                            ('units_per_block', units_per_block)):
            if int(value) < 1:
                raise InvalidArgumentError("{} must be positive, got {}".format(name, value))
        if int(n_blocks) < 0:
            raise InvalidArgumentError("n_blocks must not be negative")
        if int(kernel) % 2 != 1:
            raise InvalidArgumentError("kernel must be odd for same padding, got {}".format(kernel))
        self._in_channels = int(in_channels)
        self._latent_channels = int(latent_channels)
        self._n_blocks = int(n_blocks)
        self._kernel = int(kernel)
        self._pool_kernel = int(pool_kernel)
        self._batch_norm_at_output = bool(batch_norm_at_output)
        self._units_per_block = int(units_per_block)

    @property
    def in_channels(self) -> int:
        """DWI channel count."""
        return self._in_channels

    @property
    def latent_channels(self) -> int:
        """Length of each latent vector."""
        return self._latent_channels

    @property
    def n_blocks(self) -> int:
        """Cascading residual block count."""
        return self._n_blocks

    @property
    def kernel(self) -> int:
        """Convolution kernel size (voxels)."""
        return self._kernel

    @property
    def pool_kernel(self) -> int:
        """Smoothing average-pool size at the output (stride 1)."""
        return self._pool_kernel

    @property
    def batch_norm_at_output(self) -> bool:
        """True to end the encoder with a batch-norm layer."""
        return self._batch_norm_at_output

    @property
    def units_per_block(self) -> int:
        """Residual units inside each cascading block."""
        return self._units_per_block

    def as_dict(self) -> dict:
        return {
            'in_channels': self._in_channels,
            'latent_channels': self._latent_channels,
            'n_blocks': self._n_blocks,
            'kernel': self._kernel,
            'pool_kernel': self._pool_kernel,
            'batch_norm_at_output': self._batch_norm_at_output,
            'units_per_block': self._units_per_block,
        }

    @classmethod
    def from_dict(cls, values: dict) -> 'EncoderConfig':
        return cls(**values)

    def __repr__(self):
        return "<{}: {}>".format(self.__class__.__name__, self.as_dict())


class DecoderConfig(object):
    """Shape of the MLP decoder."""

    def __init__(self, hidden_layers: int = 3, hidden_width: int = 128,
                 frequencies: int = 4, out_dim: int = SH_COEFFS):
        if int(hidden_layers) < 0:
            raise InvalidArgumentError("hidden_layers must not be negative")
        if int(hidden_width) < 1:
            raise InvalidArgumentError("hidden_width must be positive")
        if int(frequencies) < 0:
            raise InvalidArgumentError("frequencies must not be negative")
        lmax_for(int(out_dim))
        self._hidden_layers = int(hidden_layers)
        self._hidden_width = int(hidden_width)
        self._frequencies = int(frequencies)
        self._out_dim = int(out_dim)

    @property
    def hidden_layers(self) -> int:
        """Hidden layer count; 0 makes the decoder linear."""
        return self._hidden_layers

    @property
    def hidden_width(self) -> int:
        """Units per hidden layer."""
        return self._hidden_width

    @property
    def frequencies(self) -> int:
        """Positional encoding frequency count."""
        return self._frequencies

    @property
    def out_dim(self) -> int:
        """Number of SH coefficients produced."""
        return self._out_dim

    def in_dim(self, latent_channels: int) -> int:
        """Width of the first decoder layer for a latent length."""
        return latent_channels + 6 + 6 * self._frequencies

    def as_dict(self) -> dict:
        return {
            'hidden_layers': self._hidden_layers,
            'hidden_width': self._hidden_width,
            'frequencies': self._frequencies,
            'out_dim': self._out_dim,
        }

    @classmethod
    def from_dict(cls, values: dict) -> 'DecoderConfig':
        return cls(**values)

    def __repr__(self):
        return "<{}: {}>".format(self.__class__.__name__, self.as_dict())


class _ResidualUnit(nn.Module):
    def __init__(self, channels: int, kernel: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv3d(channels, channels, kernel, padding=kernel // 2),
            nn.ReLU(),
            nn.Conv3d(channels, channels, kernel, padding=kernel // 2),
        )

    def forward(self, x):
        return F.relu(self.body(x) + x)


class _CascadingBlock(nn.Module):
    """Residual units whose outputs are concatenated and fused by 1x1x1 convolutions."""

    def __init__(self, channels: int, kernel: int, units: int):
        super().__init__()
        self.units = nn.ModuleList(_ResidualUnit(channels, kernel) for _ in range(units))
        self.fusions = nn.ModuleList(
            nn.Conv3d(channels * (i + 2), channels, 1) for i in range(units))

    def forward(self, x):
        cascade = x
        out = x
        for unit, fusion in zip(self.units, self.fusions):
            cascade = torch.cat([cascade, unit(out)], dim=1)
            out = F.relu(fusion(cascade))
        return out


class Encoder(nn.Module):
    """Cascading residual network; output grid equals input grid."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        channels = config.latent_channels
        self.head = nn.Conv3d(config.in_channels, channels, config.kernel,
                              padding=config.kernel // 2)
        self.blocks = nn.ModuleList(
            _CascadingBlock(channels, config.kernel, config.units_per_block)
            for _ in range(config.n_blocks))
        self.fusions = nn.ModuleList(
            nn.Conv3d(channels * (i + 2), channels, 1) for i in range(config.n_blocks))
        self.pool_pad = config.pool_kernel - 1
        self.pool = nn.AvgPool3d(config.pool_kernel, stride=1)
        self.norm = nn.BatchNorm3d(channels) if config.batch_norm_at_output else nn.Identity()

    def forward(self, x):
        x = self.head(x)
        cascade = x
        out = x
        for block, fusion in zip(self.blocks, self.fusions):
            cascade = torch.cat([cascade, block(out)], dim=1)
            out = F.relu(fusion(cascade))
        if self.pool_pad:
            pad = (0, self.pool_pad) * 3
            out = F.pad(out, pad, mode='replicate')
        out = self.pool(out)
        return self.norm(out)


class PassCounter(object):
    """Running total of decoded rows; safe to bump from tracking workers."""

    def __init__(self, value: int = 0):
        self._value = int(value)
        self._lock = threading.Lock()

    @property
    def value(self) -> int:
        """Rows counted so far."""
        return self._value

    def add(self, rows: int) -> None:
        with self._lock:
            self._value += int(rows)

    def reset(self, value: int = 0) -> None:
        with self._lock:
            self._value = int(value)

    def __deepcopy__(self, memo):
        return PassCounter(self._value)

    def __repr__(self):
        return "<{}: value={}>".format(self.__class__.__name__, self._value)


class Decoder(nn.Module):
    """MLP from [latent | center | query | encoded offset] to standardised SH."""

    def __init__(self, config: DecoderConfig, latent_channels: int):
        super().__init__()
        widths = [config.in_dim(latent_channels)] \
            + [config.hidden_width] * config.hidden_layers + [config.out_dim]
        layers = []
        for index, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            layers.append(nn.Linear(fan_in, fan_out))
            if index < len(widths) - 2:
                layers.append(nn.ReLU())
        self.layers = nn.Sequential(*layers)
        self.in_features = widths[0]
        self._counter = PassCounter()

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise InvalidArgumentError("decoder expects {} inputs, got {}".format(
                self.in_features, x.shape[-1]))
        self._counter.add(np.prod(x.shape[:-1]))
        return self.layers(x)

    @property
    def passes(self) -> int:
        """Rows decoded since construction or the last reset."""
        return self._counter.value

    @passes.setter
    def passes(self, value: int) -> None:
        self._counter.reset(value)


class FenriModel(nn.Module):
    """Encoder, decoder and the statistics tying them to raw SH units."""

    def __init__(self, encoder_cfg: EncoderConfig, decoder_cfg: DecoderConfig):
        super().__init__()
        self._encoder_cfg = encoder_cfg
        self._decoder_cfg = decoder_cfg
        self.encoder = Encoder(encoder_cfg)
        self.decoder = Decoder(decoder_cfg, encoder_cfg.latent_channels)

        lmax = lmax_for(decoder_cfg.out_dim)
        n_degrees = lmax // 2 + 1
        degrees, _ = sh_order_indices(lmax)
        self.register_buffer('degree_scales', torch.ones(n_degrees))
        self.register_buffer('degree_means', torch.zeros(n_degrees))
        self.register_buffer('world_normalizer',
                             torch.tensor([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]))
        self.register_buffer('coefficient_degree',
                             torch.as_tensor(degrees // 2, dtype=torch.long),
                             persistent=False)

    @property
    def encoder_cfg(self) -> EncoderConfig:
        """Encoder configuration."""
        return self._encoder_cfg

    @property
    def decoder_cfg(self) -> DecoderConfig:
        """Decoder configuration."""
        return self._decoder_cfg

    @property
    def dtype(self) -> torch.dtype:
        """Floating point type of the parameters."""
        return next(self.parameters()).dtype

    # METHODS - Statistics

    def set_statistics(self, means, scales) -> None:
        """Install per-degree means and standard deviations of the targets."""
        means = torch.as_tensor(np.asarray(means, dtype=np.float64)).reshape(-1)
        scales = torch.as_tensor(np.asarray(scales, dtype=np.float64)).reshape(-1)
        if scales.shape != self.degree_scales.shape or means.shape != self.degree_means.shape:
            raise InvalidArgumentError("expected {} degree statistics".format(
                self.degree_scales.numel()))
        if not torch.all(torch.isfinite(scales)) or torch.any(scales <= 0):
            raise InvalidArgumentError("degree scales must be positive and finite")
        if not torch.all(torch.isfinite(means)):
            raise InvalidArgumentError("degree means must be finite")
        self.degree_scales.copy_(scales)
        self.degree_means.copy_(means)

    def set_world_normalizer(self, grid: VolumeGrid) -> None:
        """Map the voxel-center bounding box of ``grid`` onto [0,1]^3."""
        bounds = torch.as_tensor(np.stack([grid.lower, grid.upper]))
        self.world_normalizer.copy_(bounds)

    def standardize(self, coeffs: torch.Tensor) -> torch.Tensor:
        index = self.coefficient_degree
        return (coeffs - self.degree_means[index]) / self.degree_scales[index]

    def destandardize(self, standardized: torch.Tensor) -> torch.Tensor:
        index = self.coefficient_degree
        return standardized * self.degree_scales[index] + self.degree_means[index]

    # METHODS - Forward

    def forward(self, dwi: torch.Tensor) -> torch.Tensor:
        """Latent grid of shape (batch, c_L, X, Y, Z) for DWIs of shape (batch, C, X, Y, Z)."""
        return self.encoder(dwi)

    def decode_rows(self, latents: torch.Tensor, centers: torch.Tensor,
                    queries: torch.Tensor, voxel_size: torch.Tensor,
                    standardized: bool = False) -> torch.Tensor:
        """Decode one row per (latent, center, query) triple."""
        offsets = ((centers - queries) / (2.0 * voxel_size) + 0.5).clamp(0.0, OFFSET_MAX)
        lower, upper = self.world_normalizer[0], self.world_normalizer[1]
        extent = upper - lower
        features = torch.cat([
            latents,
            (centers - lower) / extent,
            (queries - lower) / extent,
            fourier_features(offsets, self._decoder_cfg.frequencies),
        ], dim=-1)
        out = self.decoder(features)
        return out if standardized else self.destandardize(out)

    def query(self, latent: torch.Tensor, grid: VolumeGrid, points,
              standardized: bool = False, clamp: bool = False) -> torch.Tensor:
        """
        Blend the 8 ensemble decodes at each query point.

        ``latent`` has shape (c_L, X, Y, Z) on ``grid``; ``points`` are world
        mm of shape (n, 3). Raises OutOfDomainError unless ``clamp`` is set.
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        indices, weights = ensemble_arrays(grid, points, clamp=clamp)
        shape = grid.shape
        flat = (indices[..., 0] * shape[1] + indices[..., 1]) * shape[2] + indices[..., 2]
        dtype = latent.dtype
        rows = latent.reshape(latent.shape[0], -1).t()[torch.as_tensor(flat.reshape(-1))]
        centers = torch.as_tensor(grid.grid_to_world(indices.reshape(-1, 3)), dtype=dtype)
        queries = torch.as_tensor(np.repeat(points, 8, axis=0), dtype=dtype)
        voxel = torch.as_tensor(grid.voxel_size, dtype=dtype)
        decoded = self.decode_rows(rows, centers, queries, voxel, standardized)
        decoded = decoded.reshape(points.shape[0], 8, -1)
        return (torch.as_tensor(weights, dtype=dtype)[..., None] * decoded).sum(dim=1)

    def __repr__(self):
        return "<{}: encoder={}, decoder={}>".format(
            self.__class__.__name__,
            self._encoder_cfg.as_dict(),
            self._decoder_cfg.as_dict(),
        )


def fourier_features(offsets: torch.Tensor, frequencies: int) -> torch.Tensor:
    """(sin, cos) of 2*pi*2^j*offset, axis-major then frequency; shape (..., 6*frequencies)."""
    if frequencies == 0:
        return offsets.new_zeros(offsets.shape[:-1] + (0,))
    scales = 2.0 * math.pi * (2.0 ** torch.arange(frequencies, dtype=offsets.dtype,
                                                  device=offsets.device))
    angles = offsets[..., :, None] * scales
    encoded = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1)
    return encoded.reshape(offsets.shape[:-1] + (6 * frequencies,))


def positional_encode(delta, m: int) -> np.ndarray:
    """Fourier encoding of an offset in [0,1)^3 as a 6m-vector."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (3,):
        raise InvalidArgumentError("offset must be a 3-vector")
    if np.any(delta < 0.0) or np.any(delta >= 1.0):
        raise InvalidArgumentError("offset components must lie in [0,1), got {}".format(delta))
    if m < 0:
        raise InvalidArgumentError("frequency count must not be negative")
    return fourier_features(torch.as_tensor(delta), int(m)).numpy()


def normalize_offset(p, q, voxel_size) -> np.ndarray:
    """Map an ensemble offset p - q in (-voxel, +voxel) onto [0,1)."""
    delta = np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    voxel = np.broadcast_to(np.asarray(voxel_size, dtype=np.float64), (3,))
    if np.any(np.abs(delta) >= voxel):
        raise InvalidArgumentError("offset {} is not smaller than the voxel size {}".format(
            delta.tolist(), voxel.tolist()))
    return np.clip(delta / (2.0 * voxel) + 0.5, 0.0, OFFSET_MAX)


def wmse(pred, target, degree_scales) -> float:
    """Mean over coefficients of the squared per-degree-scaled error."""
    is_torch = isinstance(pred, torch.Tensor)
    scales = degree_scales if isinstance(degree_scales, torch.Tensor) \
        else torch.as_tensor(np.asarray(degree_scales, dtype=np.float64))
    if torch.any(scales <= 0):
        raise InvalidArgumentError("degree scales must be positive")
    pred_t = pred if is_torch else torch.as_tensor(np.asarray(pred, dtype=np.float64))
    target_t = target if isinstance(target, torch.Tensor) \
        else torch.as_tensor(np.asarray(target, dtype=np.float64))
    if pred_t.shape != target_t.shape:
        raise InvalidArgumentError("shape mismatch {} vs {}".format(
            tuple(pred_t.shape), tuple(target_t.shape)))
    degrees, _ = sh_order_indices(lmax_for(pred_t.shape[-1]))
    per_coeff = scales.to(pred_t.dtype)[torch.as_tensor(degrees // 2)]
    loss = (((pred_t - target_t.to(pred_t.dtype)) / per_coeff) ** 2).mean()
    return loss if is_torch else float(loss)


def build_model(encoder_cfg: EncoderConfig, decoder_cfg: DecoderConfig,
                seed: Optional[int] = None, dtype: torch.dtype = torch.float32) -> FenriModel:
    """Model with parameters drawn from a seeded generator."""
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        model = FenriModel(encoder_cfg, decoder_cfg)
    return model.to(dtype)


def volume_tensor(volume: ChannelVolume, dtype: torch.dtype) -> torch.Tensor:
    """Channels-first tensor of shape (C, X, Y, Z)."""
    return torch.as_tensor(np.ascontiguousarray(np.moveaxis(volume.data, 3, 0)), dtype=dtype)


def encode(model: FenriModel, dwi: ChannelVolume) -> ChannelVolume:
    """Latent volume on the DWI grid."""
    if dwi.channels != model.encoder_cfg.in_channels:
        raise InvalidArgumentError("model expects {} DWI channels, got {}".format(
            model.encoder_cfg.in_channels, dwi.channels))
    model.eval()
    with torch.no_grad():
        latent = model(volume_tensor(dwi, model.dtype)[None])[0]
    return ChannelVolume(dwi.grid, np.moveaxis(latent.numpy(), 0, 3))


def decode_single(model: FenriModel, latent, p, q, voxel_size) -> np.ndarray:
    """SH coefficients decoded from one latent vector at center ``p`` for query ``q``."""
    dtype = model.dtype
    model.eval()
    with torch.no_grad():
        out = model.decode_rows(
            torch.as_tensor(np.asarray(latent, dtype=np.float64), dtype=dtype)[None],
            torch.as_tensor(np.asarray(p, dtype=np.float64), dtype=dtype)[None],
            torch.as_tensor(np.asarray(q, dtype=np.float64), dtype=dtype)[None],
            torch.as_tensor(np.broadcast_to(np.asarray(voxel_size, dtype=np.float64), (3,)),
                            dtype=dtype))
    return out[0].numpy().astype(np.float64)


def predict_points(model: FenriModel, latent: ChannelVolume, points,
                   clamp: bool = False) -> np.ndarray:
    """SH coefficients at many world points, shape (n, out_dim)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tensor = volume_tensor(latent, model.dtype)
    out = np.empty((points.shape[0], model.decoder_cfg.out_dim))
    model.eval()
    with torch.no_grad():
        for start in range(0, points.shape[0], PREDICT_CHUNK):
            chunk = points[start:start + PREDICT_CHUNK]
            out[start:start + PREDICT_CHUNK] = model.query(tensor, latent.grid, chunk,
                                                           clamp=clamp).numpy()
    return out


def predict(model: FenriModel, latent: ChannelVolume, q) -> np.ndarray:
    """SH coefficients at one world point."""
    return predict_points(model, latent, q)[0]


def predict_volume(model: FenriModel, dwi: ChannelVolume, target: VolumeGrid) -> ChannelVolume:
    """Encode once, then decode at every voxel center of ``target``."""
    latent = encode(model, dwi)
    _LOGGER.debug("Predicting %d voxels on %s", target.n_voxels, target)
    values = predict_points(model, latent, target.voxel_centers())
    return ChannelVolume(target, values.reshape(target.shape + (values.shape[1],)))
