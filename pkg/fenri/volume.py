"""
Rectilinear grids, world/grid coordinate maps and trilinear sampling.

Grids are axis-aligned in the core: a voxel index ``i`` has its center at
``origin + i * voxel_size``. A general affine is carried along for file I/O.
Queries up to half a voxel outside the voxel-center bounding box are clamped
onto it; anything further out is out of domain.
"""

import itertools
import logging
from typing import Sequence, Tuple

import numpy as np

from fenri.exceptions import InvalidArgumentError, OutOfDomainError

_LOGGER = logging.getLogger(__name__)

# Corner offsets of a 2x2x2 cell, in the order used by every ensemble
CORNERS = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.intp)
CORNERS.flags.writeable = False

# Grid-unit tolerance for domain tests and snapping onto voxel centers
GRID_EPS = 1e-9

# Points handled per vectorised sampling pass
SAMPLE_CHUNK = 65536

# Subsamples per axis for the box window of block_downsample
SUPERSAMPLE = 4


class VolumeGrid(object):
    """Axis-aligned sampling grid; voxel (0,0,0) is centered on ``origin``."""

    def __init__(self, shape: Sequence[int], voxel_size, origin=(0.0, 0.0, 0.0),
                 affine=None):
        shape = tuple(int(n) for n in shape)
        if len(shape) != 3 or min(shape) < 2:
            raise InvalidArgumentError(
                "grid needs at least 2 voxels along each of 3 axes, got {}".format(shape))
        voxel = np.broadcast_to(np.asarray(voxel_size, dtype=np.float64), (3,)).copy()
        if not np.all(np.isfinite(voxel)) or np.any(voxel <= 0):
            raise InvalidArgumentError("voxel sizes must be positive, got {}".format(voxel))
        origin = np.asarray(origin, dtype=np.float64).reshape(3).copy()
        if affine is None:
            affine = np.eye(4)
            affine[:3, :3] = np.diag(voxel)
            affine[:3, 3] = origin
        affine = np.array(affine, dtype=np.float64).reshape(4, 4)

        for array in (voxel, origin, affine):
            array.flags.writeable = False
        self._shape = shape
        self._voxel_size = voxel
        self._origin = origin
        self._affine = affine

    @classmethod
    def from_affine(cls, shape: Sequence[int], affine) -> 'VolumeGrid':
        """Grid for an image header; rotations and flips are kept as metadata only."""
        affine = np.asarray(affine, dtype=np.float64)
        linear = affine[:3, :3]
        voxel = np.linalg.norm(linear, axis=0)
        if not np.allclose(linear, np.diag(np.diag(linear))) or np.any(np.diag(linear) < 0):
            _LOGGER.warning("Affine is not a positive axis-aligned scaling; "
                            "sampling treats the grid as axis-aligned")
        return cls(shape, voxel, affine[:3, 3], affine)

    @property
    def shape(self) -> Tuple[int, int, int]:
        """Voxel count along each axis."""
        return self._shape

    @property
    def voxel_size(self) -> np.ndarray:
        """Voxel edge lengths (mm)."""
        return self._voxel_size

    @property
    def origin(self) -> np.ndarray:
        """World position (mm) of the center of voxel (0,0,0)."""
        return self._origin

    @property
    def affine(self) -> np.ndarray:
        """Voxel-to-world affine as stored in image headers."""
        return self._affine

    @property
    def n_voxels(self) -> int:
        """Total voxel count."""
        return int(np.prod(self._shape))

    @property
    def lower(self) -> np.ndarray:
        """Lowest voxel center (mm)."""
        return self._origin

    @property
    def upper(self) -> np.ndarray:
        """Highest voxel center (mm)."""
        return self._origin + (np.array(self._shape) - 1) * self._voxel_size

    @property
    def fov_lower(self) -> np.ndarray:
        """Lower corner of the field of view (mm)."""
        return self._origin - 0.5 * self._voxel_size

    @property
    def fov_upper(self) -> np.ndarray:
        """Upper corner of the field of view (mm)."""
        return self.upper + 0.5 * self._voxel_size

    def world_to_grid(self, points) -> np.ndarray:
        """Continuous grid coordinates of world points (mm)."""
        return (np.asarray(points, dtype=np.float64) - self._origin) / self._voxel_size

    def grid_to_world(self, coords) -> np.ndarray:
        """World positions (mm) of continuous grid coordinates."""
        return np.asarray(coords, dtype=np.float64) * self._voxel_size + self._origin

    def voxel_centers(self) -> np.ndarray:
        """World position of every voxel center, C order, shape (n_voxels, 3)."""
        index = np.indices(self._shape).reshape(3, -1).T
        return self.grid_to_world(index)

    def contains(self, points) -> np.ndarray:
        """True for points inside the half-voxel clamping margin."""
        coords = self.world_to_grid(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        top = np.array(self._shape) - 1
        return np.all((coords >= -0.5 - GRID_EPS) & (coords <= top + 0.5 + GRID_EPS), axis=1)

    def downsampled(self, factor: float) -> 'VolumeGrid':
        """Coarser grid over the same field of view, aligned on its lower corner."""
        voxel = self._voxel_size * factor
        extent = np.array(self._shape) * self._voxel_size
        shape = np.maximum(2, np.floor(extent / voxel + 1e-6).astype(int))
        return VolumeGrid(shape, voxel, self.fov_lower + 0.5 * voxel)

    def matches(self, other: 'VolumeGrid', atol: float = 1e-6) -> bool:
        """True if both grids sample the same points."""
        return (self._shape == other.shape
                and np.allclose(self._voxel_size, other.voxel_size, atol=atol)
                and np.allclose(self._origin, other.origin, atol=atol))

    def __repr__(self):
        return "<{}: shape={}, voxel_size={}, origin={}>".format(
            self.__class__.__name__,
            self._shape,
            self._voxel_size.tolist(),
            self._origin.tolist(),
        )


class ChannelVolume(object):
    """Immutable multi-channel volume sampled on a :class:`VolumeGrid`."""

    def __init__(self, grid: VolumeGrid, data):
        data = np.array(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if data.ndim == 3:
            data = data[..., None]
        if data.ndim != 4 or data.shape[:3] != grid.shape or data.shape[3] < 1:
            raise InvalidArgumentError(
                "data of shape {} does not fit grid {}".format(data.shape, grid.shape))
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("volume data must be finite")
        data.flags.writeable = False
        self._grid = grid
        self._data = data

    @property
    def grid(self) -> VolumeGrid:
        """Sampling grid."""
        return self._grid

    @property
    def data(self) -> np.ndarray:
        """Read-only array of shape grid.shape + (channels,)."""
        return self._data

    @property
    def channels(self) -> int:
        """Number of channels."""
        return self._data.shape[3]

    def select_channels(self, indices) -> 'ChannelVolume':
        """Volume restricted to the given channels, in the given order."""
        indices = np.asarray(indices, dtype=np.intp).reshape(-1)
        if indices.size == 0 or indices.min() < 0 or indices.max() >= self.channels:
            raise InvalidArgumentError("channel subset out of range")
        return ChannelVolume(self._grid, self._data[..., indices])

    def __repr__(self):
        return "<{}: grid={}, channels={}, dtype={}>".format(
            self.__class__.__name__,
            self._grid,
            self.channels,
            self._data.dtype,
        )


class LocalEnsemble(object):
    """The 2x2x2 voxel centers around a query with their trilinear weights."""

    def __init__(self, indices: np.ndarray, centers: np.ndarray, weights: np.ndarray):
        self._indices = indices
        self._centers = centers
        self._weights = weights

    @property
    def indices(self) -> np.ndarray:
        """Voxel index of each corner, shape (8, 3)."""
        return self._indices

    @property
    def centers(self) -> np.ndarray:
        """World position of each corner, shape (8, 3)."""
        return self._centers

    @property
    def weights(self) -> np.ndarray:
        """Trilinear weight of each corner; sums to 1."""
        return self._weights

    def __iter__(self):
        return iter(zip(self._indices, self._centers, self._weights))

    def __repr__(self):
        return "<{}: base={}, weights={}>".format(
            self.__class__.__name__,
            self._indices[0].tolist(),
            np.round(self._weights, 4).tolist(),
        )


def world_to_grid(grid: VolumeGrid, point) -> np.ndarray:
    """Continuous grid coordinates of a world point."""
    return grid.world_to_grid(point)


def ensemble_arrays(grid: VolumeGrid, points, clamp: bool = False,
                    extrapolate: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorised local ensembles.

    Returns corner indices of shape (n, 8, 3) and weights of shape (n, 8).
    The containing cell is unique: queries on a shared face use the lower
    cell, where the differing corners carry zero weight. With ``clamp`` set,
    points beyond the half-voxel margin are clamped instead of rejected.

    With ``extrapolate`` set, points in the half-voxel margin are extended
    linearly from the boundary cell instead of being clamped onto its face.
    Weights may then be negative but still sum to 1.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    coords = grid.world_to_grid(points)
    top = np.array(grid.shape) - 1
    if not clamp:
        outside = np.any((coords < -0.5 - GRID_EPS) | (coords > top + 0.5 + GRID_EPS), axis=1)
        if np.any(outside):
            raise OutOfDomainError("{} of {} points lie outside the grid domain, e.g. {}".format(
                int(outside.sum()), points.shape[0], points[np.argmax(outside)].tolist()))

    nearest = np.round(coords)
    coords = np.where(np.abs(coords - nearest) < GRID_EPS, nearest, coords)
    if extrapolate:
        coords = np.clip(coords, -0.5, top + 0.5)
    else:
        coords = np.clip(coords, 0.0, top)
    base = np.clip(np.floor(coords).astype(np.intp), 0, top - 1)
    frac = coords - base
    indices = base[:, None, :] + CORNERS[None, :, :]
    weights = np.prod(np.where(CORNERS[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :]),
                      axis=2)
    return indices, weights


def local_ensemble(grid: VolumeGrid, point) -> LocalEnsemble:
    """The 8 voxel centers of the cell containing ``point``."""
    indices, weights = ensemble_arrays(grid, point)
    return LocalEnsemble(indices[0], grid.grid_to_world(indices[0]), weights[0])


def trilinear_sample_many(volume: ChannelVolume, points, clamp: bool = False,
                          extrapolate: bool = False) -> np.ndarray:
    """Trilinear samples at many points, shape (n, channels)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty((points.shape[0], volume.channels))
    data = volume.data
    for start in range(0, points.shape[0], SAMPLE_CHUNK):
        indices, weights = ensemble_arrays(volume.grid, points[start:start + SAMPLE_CHUNK], clamp,
                                           extrapolate)
        values = data[indices[..., 0], indices[..., 1], indices[..., 2]]
        out[start:start + SAMPLE_CHUNK] = np.einsum('nk,nkc->nc', weights, values)
    return out


def trilinear_sample(volume: ChannelVolume, point) -> np.ndarray:
    """Trilinear sample of every channel at one world point."""
    return trilinear_sample_many(volume, point)[0]


def resample_volume(volume: ChannelVolume, target: VolumeGrid) -> ChannelVolume:
    """Trilinear resampling onto ``target``; centers beyond the margin are clamped."""
    source = volume.grid
    if np.any(target.upper < source.fov_lower) or np.any(target.lower > source.fov_upper):
        raise InvalidArgumentError("target grid does not overlap the source volume")
    values = trilinear_sample_many(volume, target.voxel_centers(), clamp=True)
    return ChannelVolume(target, values.reshape(target.shape + (volume.channels,)))


def block_downsample(volume: ChannelVolume, factor: float) -> ChannelVolume:
    """
    Box-window average onto a grid with voxels ``factor`` times larger.

    Each output voxel averages SUPERSAMPLE**3 trilinear reads spread evenly
    over its footprint. Reads in the outer half voxel of the source are
    extrapolated from the boundary cell, so affine fields stay exact up to
    the edges.
    """
    if not factor >= 1.0:
        raise InvalidArgumentError("downsampling factor must be >= 1, got {}".format(factor))
    if factor == 1.0:
        return ChannelVolume(volume.grid, volume.data)

    target = volume.grid.downsampled(factor)
    steps = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    offsets = np.array(list(itertools.product(steps, repeat=3))) * target.voxel_size
    centers = target.voxel_centers()
    out = np.empty((centers.shape[0], volume.channels))
    per_chunk = max(1, SAMPLE_CHUNK // offsets.shape[0])
    for start in range(0, centers.shape[0], per_chunk):
        block = centers[start:start + per_chunk]
        points = (block[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
        samples = trilinear_sample_many(volume, points, clamp=True, extrapolate=True)
        out[start:start + per_chunk] = samples.reshape(block.shape[0], -1, volume.channels).mean(axis=1)
    _LOGGER.debug("Downsampled %s by %.3f to %s", volume.grid.shape, factor, target.shape)
    return ChannelVolume(target, out.reshape(target.shape + (volume.channels,)).astype(volume.data.dtype))
