"""
Deterministic streamline tracking over a continuous fODF field.

Each streamline starts at a seed along the largest fODF peak there and grows
in both directions with fixed-length Euler steps. At every new point the
direction is refined by gradient ascent on the fODF, starting from the
previous direction. Growth stops when the point leaves the field's domain,
the peak is too weak, the turn is too sharp, or the step budget runs out.

Seeds are tracked in lockstep batches of a fixed size, so results do not
depend on the number of worker threads.
"""

import abc
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from fenri.const import (
    PEAK_MIN_AMPLITUDE, TRACK_ANGLE_DEG, TRACK_MAX_LENGTH_VOXELS, TRACK_MAX_STEPS,
    TRACK_MIN_LENGTH_VOXELS, TRACK_STEP_VOXELS)
from fenri.enums import TerminationReason
from fenri.exceptions import InvalidArgumentError, OutOfDomainError
from fenri.field import encode, volume_tensor
from fenri.shcore import evaluate_odf, find_peaks_batch, lmax_for, refine_peaks
from fenri.volume import ChannelVolume, VolumeGrid, trilinear_sample_many

_LOGGER = logging.getLogger(__name__)

# Seeds tracked together in one lockstep batch
SEED_CHUNK = 64

Termination = Tuple[Optional[TerminationReason], Optional[TerminationReason]]


class Streamline(object):
    """Ordered points with the seed position and why each end stopped."""

    def __init__(self, points, seed_index: int = 0, termination: Termination = (None, None)):
        points = np.array(points, dtype=np.float64).reshape(-1, 3)
        if points.shape[0] and not 0 <= seed_index < points.shape[0]:
            raise InvalidArgumentError("seed index {} outside a streamline of {} points".format(
                seed_index, points.shape[0]))
        points.flags.writeable = False
        self._points = points
        self._seed_index = int(seed_index)
        self._termination = tuple(termination)

    @classmethod
    def empty(cls, reason: TerminationReason) -> 'Streamline':
        return cls(np.zeros((0, 3)), 0, (reason, reason))

    @property
    def points(self) -> np.ndarray:
        """World positions (mm), shape (n, 3)."""
        return self._points

    @property
    def seed_index(self) -> int:
        """Index of the seed point."""
        return self._seed_index

    @property
    def termination(self) -> Termination:
        """Termination reason of the (backward, forward) ends."""
        return self._termination

    @property
    def length(self) -> float:
        """Polyline length (mm)."""
        if self._points.shape[0] < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self._points, axis=0), axis=1)))

    def __len__(self):
        return self._points.shape[0]

    def __repr__(self):
        return "<{}: points={}, length={:.2f}, seed_index={}, termination={}>".format(
            self.__class__.__name__,
            self._points.shape[0],
            self.length,
            self._seed_index,
            tuple(str(reason) for reason in self._termination),
        )


class StreamlineSet(object):
    """Streamlines with the index of the seed each one came from."""

    def __init__(self, streamlines: Sequence[Streamline] = (), seed_ids=None):
        self._streamlines = list(streamlines)
        if seed_ids is None:
            seed_ids = range(len(self._streamlines))
        self._seed_ids = [int(i) for i in seed_ids]
        if len(self._seed_ids) != len(self._streamlines):
            raise InvalidArgumentError("one seed id per streamline is required")

    @property
    def streamlines(self) -> List[Streamline]:
        """Streamlines in seed order."""
        return self._streamlines

    @property
    def seed_ids(self) -> List[int]:
        """Seed index of each streamline."""
        return self._seed_ids

    def __len__(self):
        return len(self._streamlines)

    def __iter__(self):
        return iter(self._streamlines)

    def __getitem__(self, index) -> Streamline:
        return self._streamlines[index]

    def __repr__(self):
        return "<{}: streamlines={}>".format(self.__class__.__name__, len(self._streamlines))


class TrackingParams(object):
    """Step, curvature, amplitude and length limits of the tracker."""

    def __init__(self, step_size: float, max_angle_deg: float,
                 amplitude_cutoff: float = PEAK_MIN_AMPLITUDE, min_length: float = 0.0,
                 max_length: float = math.inf, max_steps: int = TRACK_MAX_STEPS):
        if not step_size > 0:
            raise InvalidArgumentError("step size must be positive")
        if not 0 < max_angle_deg <= 180:
            raise InvalidArgumentError("max angle must lie in (0, 180]")
        if not amplitude_cutoff >= 0:
            raise InvalidArgumentError("amplitude cutoff must not be negative")
        if not min_length < max_length:
            raise InvalidArgumentError("min_length must be below max_length")
        if int(max_steps) < 0:
            raise InvalidArgumentError("max_steps must not be negative")
        self._step_size = float(step_size)
        self._max_angle_deg = float(max_angle_deg)
        self._amplitude_cutoff = float(amplitude_cutoff)
        self._min_length = float(min_length)
        self._max_length = float(max_length)
        self._max_steps = int(max_steps)

    @classmethod
    def for_voxel(cls, voxel_size: float, step_size: Optional[float] = None,
                  max_angle_deg: Optional[float] = None, **kwargs) -> 'TrackingParams':
        """Defaults scaled to the voxel size of the output grid."""
        step = step_size if step_size is not None else TRACK_STEP_VOXELS * voxel_size
        angle = max_angle_deg if max_angle_deg is not None \
            else min(180.0, TRACK_ANGLE_DEG * step / voxel_size)
        kwargs.setdefault('min_length', TRACK_MIN_LENGTH_VOXELS * voxel_size)
        kwargs.setdefault('max_length', TRACK_MAX_LENGTH_VOXELS * voxel_size)
        return cls(step, angle, **kwargs)

    @property
    def step_size(self) -> float:
        """Euler step (mm)."""
        return self._step_size

    @property
    def max_angle_deg(self) -> float:
        """Largest direction change per step (degrees)."""
        return self._max_angle_deg

    @property
    def amplitude_cutoff(self) -> float:
        """Smallest fODF peak amplitude that keeps a track alive."""
        return self._amplitude_cutoff

    @property
    def min_length(self) -> float:
        """Shorter streamlines are discarded (mm)."""
        return self._min_length

    @property
    def max_length(self) -> float:
        """Total length budget of a streamline (mm)."""
        return self._max_length

    @property
    def max_steps(self) -> int:
        """Step budget of each half of a streamline."""
        return self._max_steps

    def __repr__(self):
        return "<{}: step={}, angle={}, cutoff={}, length=[{}, {}], max_steps={}>".format(
            self.__class__.__name__,
            self._step_size,
            self._max_angle_deg,
            self._amplitude_cutoff,
            self._min_length,
            self._max_length,
            self._max_steps,
        )


class DirectionField(abc.ABC):
    """Continuous field of fODFs over the domain of a grid."""

    @property
    @abc.abstractmethod
    def grid(self) -> VolumeGrid:
        """Grid whose domain bounds the field."""

    @abc.abstractmethod
    def odf_many(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """SH coefficients at each point and a validity flag; invalid rows are zero."""

    def odf(self, q) -> np.ndarray:
        """SH coefficients at one point; OutOfDomainError outside the domain."""
        coeffs, valid = self.odf_many(q)
        if not valid[0]:
            raise OutOfDomainError("point {} is outside the field".format(np.asarray(q).tolist()))
        return coeffs[0]

    def amplitude(self, q, direction) -> float:
        """fODF value at ``q`` along ``direction``."""
        return float(evaluate_odf(self.odf(q), np.asarray(direction, dtype=np.float64)[None])[0])


class TrilinearSHField(DirectionField):
    """Trilinear interpolation of an SH coefficient volume."""

    def __init__(self, volume: ChannelVolume):
        lmax_for(volume.channels)
        self._volume = volume

    @property
    def grid(self) -> VolumeGrid:
        return self._volume.grid

    @property
    def volume(self) -> ChannelVolume:
        """Interpolated SH volume."""
        return self._volume

    def odf_many(self, points) -> Tuple[np.ndarray, np.ndarray]:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        valid = self._volume.grid.contains(points)
        out = np.zeros((points.shape[0], self._volume.channels))
        if np.any(valid):
            out[valid] = trilinear_sample_many(self._volume, points[valid])
        return out, valid

    def __repr__(self):
        return "<{}: {}>".format(self.__class__.__name__, self._volume)


class FenriField(DirectionField):
    """Neural field decoded from a cached latent volume."""

    def __init__(self, model, latent: ChannelVolume):
        if latent.channels != model.encoder_cfg.latent_channels:
            raise InvalidArgumentError("latent volume has {} channels, model expects {}".format(
                latent.channels, model.encoder_cfg.latent_channels))
        self._model = model.eval()
        self._latent = latent
        self._tensor = volume_tensor(latent, model.dtype)

    @classmethod
    def from_dwi(cls, model, dwi: ChannelVolume) -> 'FenriField':
        """Encode ``dwi`` once and keep its latent volume."""
        return cls(model, encode(model, dwi))

    @property
    def grid(self) -> VolumeGrid:
        return self._latent.grid

    @property
    def latent(self) -> ChannelVolume:
        """Cached latent volume."""
        return self._latent

    def odf_many(self, points) -> Tuple[np.ndarray, np.ndarray]:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        valid = self._latent.grid.contains(points)
        out = np.zeros((points.shape[0], self._model.decoder_cfg.out_dim))
        if np.any(valid):
            with torch.no_grad():
                decoded = self._model.query(self._tensor, self._latent.grid, points[valid],
                                            clamp=True)
            out[valid] = decoded.numpy()
        return out, valid

    def __repr__(self):
        return "<{}: latent={}>".format(self.__class__.__name__, self._latent)


def _refined_directions(field: DirectionField, points: np.ndarray, previous: np.ndarray,
                        params: TrackingParams) -> Tuple[np.ndarray, List[Optional[TerminationReason]]]:
    """Next direction per row, or the reason it cannot continue."""
    coeffs, valid = field.odf_many(points)
    reasons = [None if ok else TerminationReason.OutOfDomain for ok in valid]
    directions = np.array(previous, dtype=np.float64)
    rows = np.flatnonzero(valid)
    if rows.size == 0:
        return directions, reasons

    refined, amplitude = refine_peaks(coeffs[rows], previous[rows])
    cosine = np.einsum('ij,ij->i', refined, previous[rows])
    refined[cosine < 0] *= -1.0
    cosine = np.abs(cosine)
    limit = math.cos(math.radians(params.max_angle_deg))
    for k, row in enumerate(rows):
        if amplitude[k] < params.amplitude_cutoff:
            reasons[row] = TerminationReason.LowAmplitude
        elif cosine[k] < limit - 1e-12:
            reasons[row] = TerminationReason.HighCurvature
        else:
            directions[row] = refined[k]
    return directions, reasons


def next_direction(f: DirectionField, q, prev, params: TrackingParams) -> Optional[np.ndarray]:
    """Refined direction at ``q`` continuing ``prev``, or None if tracking must stop."""
    prev = np.asarray(prev, dtype=np.float64).reshape(1, 3)
    prev = prev / np.linalg.norm(prev)
    directions, reasons = _refined_directions(
        f, np.asarray(q, dtype=np.float64).reshape(1, 3), prev, params)
    return None if reasons[0] is not None else directions[0]


def _grow(field: DirectionField, starts: np.ndarray, directions: np.ndarray,
          params: TrackingParams, budgets: np.ndarray) -> Tuple[List[np.ndarray], list]:
    """Grow half-tracks in lockstep; each starts at its seed and never exceeds its budget."""
    count = starts.shape[0]
    step = params.step_size
    limits = np.minimum(params.max_steps,
                        np.floor(np.maximum(budgets, 0.0) / step + 1e-9)).astype(int)
    position = starts.copy()
    heading = directions.copy()
    paths = [[start] for start in starts]
    reasons = [None] * count
    taken = np.zeros(count, dtype=int)
    active = np.ones(count, dtype=bool)

    for row in np.flatnonzero(limits == 0):
        reasons[row] = TerminationReason.MaxSteps
        active[row] = False

    while np.any(active):
        rows = np.flatnonzero(active)
        moved = position[rows] + step * heading[rows]
        inside = field.grid.contains(moved)
        for row in rows[~inside]:
            reasons[row] = TerminationReason.OutOfDomain
            active[row] = False
        rows = rows[inside]
        moved = moved[inside]
        position[rows] = moved
        taken[rows] += 1
        for row, point in zip(rows, moved):
            paths[row].append(point)

        exhausted = taken[rows] >= limits[rows]
        for row in rows[exhausted]:
            reasons[row] = TerminationReason.MaxSteps
            active[row] = False
        rows = rows[~exhausted]
        if rows.size == 0:
            continue

        refined, stops = _refined_directions(field, position[rows], heading[rows], params)
        for k, row in enumerate(rows):
            if stops[k] is not None:
                reasons[row] = stops[k]
                active[row] = False
            else:
                heading[row] = refined[k]
    return [np.array(path) for path in paths], reasons


def _track_batch(field: DirectionField, seeds: np.ndarray,
                 params: TrackingParams) -> List[Streamline]:
    coeffs, valid = field.odf_many(seeds)
    results = [Streamline.empty(TerminationReason.OutOfDomain)] * seeds.shape[0]
    rows = np.flatnonzero(valid)
    peaks = find_peaks_batch(coeffs[rows], min_amplitude=params.amplitude_cutoff, max_peaks=1) \
        if rows.size else []
    tracked = []
    initial = []
    for row, peak_set in zip(rows, peaks):
        if len(peak_set) == 0:
            results[row] = Streamline.empty(TerminationReason.LowAmplitude)
        else:
            tracked.append(row)
            initial.append(peak_set.directions[0])
    if not tracked:
        return results

    starts = seeds[tracked]
    initial = np.array(initial)
    forward, forward_reasons = _grow(field, starts, initial, params,
                                     np.full(len(tracked), params.max_length))
    used = np.array([(path.shape[0] - 1) * params.step_size for path in forward])
    backward, backward_reasons = _grow(field, starts, -initial, params, params.max_length - used)

    for k, row in enumerate(tracked):
        points = np.concatenate([backward[k][::-1], forward[k][1:]], axis=0)
        line = Streamline(points, backward[k].shape[0] - 1,
                          (backward_reasons[k], forward_reasons[k]))
        if line.length < params.min_length:
            _LOGGER.debug("Discarding streamline from seed %d: %.2f mm", row, line.length)
            line = Streamline(np.zeros((0, 3)), 0, line.termination)
        results[row] = line
    return results


def track_from_seed(f: DirectionField, seed, params: TrackingParams) -> Streamline:
    """Bidirectional streamline from one seed; empty if too short or no peak."""
    return _track_batch(f, np.asarray(seed, dtype=np.float64).reshape(1, 3), params)[0]


def track_all(f: DirectionField, seeds, params: TrackingParams, workers: int = 1,
              chunk: int = SEED_CHUNK) -> StreamlineSet:
    """
    Track every seed; empty streamlines are dropped.

    The output keeps seed order and records each streamline's seed index,
    whatever the number of workers.
    """
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 3)
    if seeds.shape[0] == 0:
        return StreamlineSet()
    batches = [seeds[start:start + chunk] for start in range(0, seeds.shape[0], chunk)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix='track') as executor:
            results = list(executor.map(lambda batch: _track_batch(f, batch, params), batches))
    else:
        results = [_track_batch(f, batch, params) for batch in batches]

    lines = []
    ids = []
    reasons = {}
    for index, line in enumerate(line for batch in results for line in batch):
        if len(line):
            lines.append(line)
            ids.append(index)
        for reason in line.termination:
            reasons[str(reason)] = reasons.get(str(reason), 0) + 1
    _LOGGER.info("Tracked %d streamlines from %d seeds; end reasons %s",
                 len(lines), seeds.shape[0], reasons)
    return StreamlineSet(lines, ids)
