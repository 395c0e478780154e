"""
Evaluation metrics.

SH volumes are compared by WMSE, by the mean squared Jensen-Shannon
distance of their ODF densities (MSJSD) and by the weighted average angular
error of matched fODF peaks (WAAE). Tractograms are compared against bundle
masks by overlap (OL), overreach (OR) and Dice.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import rel_entr

from fenri.const import WAAE_PENALTY, WAAE_PREDICTED_PEAKS, WAAE_TARGET_PEAKS
from fenri.exceptions import InvalidArgumentError
from fenri.field import wmse
from fenri.shcore import (
    SPHERE_DENSITY, DirectionSet, PeakSet, axis_angle, evaluate_odf, find_peaks_batch,
    lmax_for, standard_sphere)
from fenri.tracking import StreamlineSet
from fenri.volume import ChannelVolume, VolumeGrid

_LOGGER = logging.getLogger(__name__)

# Voxels evaluated per vectorised pass
VOXEL_CHUNK = 4096


class OdfScoreReport(object):
    """WMSE, MSJSD and WAAE of a predicted SH volume, with optional per-voxel maps."""

    def __init__(self, wmse: float, msjsd: float, waae: float,
                 maps: Optional[Dict[str, np.ndarray]] = None, voxels: int = 0):
        self._wmse = float(wmse)
        self._msjsd = float(msjsd)
        self._waae = float(waae)
        self._maps = dict(maps or {})
        self._voxels = int(voxels)

    @property
    def wmse(self) -> float:
        """Degree-standardised mean squared error."""
        return self._wmse

    @property
    def msjsd(self) -> float:
        """Mean squared Jensen-Shannon distance, base 2."""
        return self._msjsd

    @property
    def waae(self) -> float:
        """Weighted average angular error (radians)."""
        return self._waae

    @property
    def maps(self) -> Dict[str, np.ndarray]:
        """Per-voxel metric maps by name, if computed."""
        return self._maps

    @property
    def voxels(self) -> int:
        """Number of voxels evaluated."""
        return self._voxels

    def as_dict(self) -> dict:
        return {'wmse': self._wmse, 'msjsd': self._msjsd, 'waae': self._waae,
                'voxels': self._voxels}

    def as_text(self) -> str:
        return ''.join("{}: {}\n".format(key, value) for key, value in self.as_dict().items())

    def as_tsv(self) -> str:
        values = self.as_dict()
        return '\t'.join(values) + '\n' + '\t'.join(str(v) for v in values.values()) + '\n'

    def __repr__(self):
        return "<{}: wmse={:.6g}, msjsd={:.6g}, waae={:.6g}, voxels={}>".format(
            self.__class__.__name__,
            self._wmse,
            self._msjsd,
            self._waae,
            self._voxels,
        )


class TractScoreReport(object):
    """Overlap, overreach and Dice of a tractogram against one bundle mask."""

    def __init__(self, ol: float, or_: float, dice: float, bundle: str = 'bundle',
                 streamlines: int = 0):
        self._ol = float(ol)
        self._or = float(or_)
        self._dice = float(dice)
        self._bundle = bundle
        self._streamlines = int(streamlines)

    @property
    def ol(self) -> float:
        """Share of the bundle covered."""
        return self._ol

    @property
    def or_(self) -> float:
        """Covered voxels outside the bundle, relative to bundle volume."""
        return self._or

    @property
    def dice(self) -> float:
        """Dice coefficient of covered voxels and bundle."""
        return self._dice

    @property
    def bundle(self) -> str:
        """Bundle name."""
        return self._bundle

    @property
    def streamlines(self) -> int:
        """Number of scored streamlines."""
        return self._streamlines

    def as_dict(self) -> dict:
        return {'bundle': self._bundle, 'streamlines': self._streamlines,
                'ol': self._ol, 'or': self._or, 'dice': self._dice}

    def as_text(self) -> str:
        return ''.join("{}: {}\n".format(key, value) for key, value in self.as_dict().items())

    def __repr__(self):
        return "<{}: bundle={}, ol={:.4f}, or={:.4f}, dice={:.4f}>".format(
            self.__class__.__name__,
            self._bundle,
            self._ol,
            self._or,
            self._dice,
        )


def tract_table(reports: Sequence[TractScoreReport]) -> str:
    """Tab-separated table with one row per bundle."""
    lines = ['bundle\tstreamlines\tol\tor\tdice']
    for report in reports:
        lines.append("{}\t{}\t{}\t{}\t{}".format(
            report.bundle, report.streamlines, report.ol, report.or_, report.dice))
    return '\n'.join(lines) + '\n'


# METHODS - Helpers

def _check_pair(pred: ChannelVolume, target: ChannelVolume) -> None:
    if not pred.grid.matches(target.grid):
        raise InvalidArgumentError("volumes lie on different grids: {} vs {}".format(
            pred.grid, target.grid))
    if pred.channels != target.channels:
        raise InvalidArgumentError("volumes carry {} and {} channels".format(
            pred.channels, target.channels))
    lmax_for(pred.channels)


def _mask_array(mask, grid: VolumeGrid) -> np.ndarray:
    if mask is None:
        return np.ones(grid.shape, dtype=bool)
    if isinstance(mask, ChannelVolume):
        if not mask.grid.matches(grid):
            raise InvalidArgumentError("mask lies on a different grid")
        mask = mask.data[..., 0]
    mask = np.asarray(mask) != 0
    if mask.shape != grid.shape:
        raise InvalidArgumentError("mask shape {} does not match grid {}".format(
            mask.shape, grid.shape))
    if not np.any(mask):
        raise InvalidArgumentError("mask is empty")
    return mask


def threshold_mask(target: ChannelVolume, threshold: float) -> np.ndarray:
    """Voxels whose c0 exceeds ``threshold``."""
    return target.data[..., 0] > threshold


def odf_densities(coeffs, dirs: DirectionSet) -> np.ndarray:
    """ODF values on ``dirs`` clamped at 0 and normalised to sum 1; uniform if all zero."""
    values = np.clip(evaluate_odf(coeffs, dirs), 0.0, None)
    totals = values.sum(axis=-1, keepdims=True)
    uniform = np.full_like(values, 1.0 / values.shape[-1])
    return np.where(totals > 0, values / np.where(totals > 0, totals, 1.0), uniform)


def jensen_shannon(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Base-2 Jensen-Shannon divergence between probability vectors (last axis)."""
    middle = 0.5 * (p + q)
    divergence = 0.5 * (rel_entr(p, middle).sum(axis=-1) + rel_entr(q, middle).sum(axis=-1))
    return np.clip(divergence / math.log(2.0), 0.0, 1.0)


def match_peaks(target_dirs, pred_dirs) -> List[Tuple[int, int]]:
    """
    Greedy matching: each target peak, in the given order, takes the closest
    still unmatched predicted peak (antipodes identified).
    """
    target_dirs = np.asarray(target_dirs, dtype=np.float64).reshape(-1, 3)
    pred_dirs = np.asarray(pred_dirs, dtype=np.float64).reshape(-1, 3)
    if target_dirs.shape[0] == 0 or pred_dirs.shape[0] == 0:
        return []
    angles = axis_angle(target_dirs[:, None, :], pred_dirs[None, :, :])
    free = np.ones(pred_dirs.shape[0], dtype=bool)
    pairs = []
    for i in range(target_dirs.shape[0]):
        if not np.any(free):
            break
        j = int(np.argmin(np.where(free, angles[i], np.inf)))
        free[j] = False
        pairs.append((i, j))
    return pairs


def voxel_angular_error(target: PeakSet, pred: PeakSet) -> float:
    """Weighted angular error of one voxel, false peaks penalised."""
    n_target = len(target)
    if n_target == 0 and len(pred) == 0:
        return 0.0
    weights = target.amplitudes / target.amplitudes.sum() if n_target else np.zeros(0)
    pairs = match_peaks(target.directions, pred.directions)
    matched_targets = {i for i, _ in pairs}
    matched_preds = {j for _, j in pairs}

    error = 0.0
    weight = 0.0
    for i, j in pairs:
        error += weights[i] * float(axis_angle(target.directions[i], pred.directions[j]))
        weight += weights[i]
    false_negatives = n_target - len(matched_targets)
    false_positives = sum(1 for j in range(min(len(pred), max(n_target, 1)))
                          if j not in matched_preds)
    penalty_weight = weight / len(pairs) if pairs else 1.0
    misses = false_negatives + false_positives
    error += misses * penalty_weight * WAAE_PENALTY
    weight += misses * penalty_weight
    return error / weight if weight > 0 else 0.0


# METHODS - ODF metrics

def msjsd_map(pred: ChannelVolume, target: ChannelVolume, dirs: Optional[DirectionSet] = None,
              mask=None) -> np.ndarray:
    """Squared JS distance per voxel; 0 outside the mask."""
    _check_pair(pred, target)
    dirs = dirs or standard_sphere(SPHERE_DENSITY)
    inside = _mask_array(mask, pred.grid)
    rows = np.flatnonzero(inside.reshape(-1))
    flat_pred = pred.data.reshape(-1, pred.channels)
    flat_target = target.data.reshape(-1, target.channels)
    out = np.zeros(inside.size)
    for start in range(0, rows.size, VOXEL_CHUNK):
        chunk = rows[start:start + VOXEL_CHUNK]
        out[chunk] = jensen_shannon(odf_densities(flat_pred[chunk], dirs),
                                    odf_densities(flat_target[chunk], dirs))
    return out.reshape(pred.grid.shape)


def msjsd(pred: ChannelVolume, target: ChannelVolume, dirs: Optional[DirectionSet] = None,
          mask=None) -> float:
    """Mean squared Jensen-Shannon distance over the mask."""
    inside = _mask_array(mask, pred.grid)
    return float(msjsd_map(pred, target, dirs, inside)[inside].mean())


def waae_map(pred: ChannelVolume, target: ChannelVolume, mask=None) -> np.ndarray:
    """Weighted average angular error per voxel (radians); 0 outside the mask."""
    _check_pair(pred, target)
    inside = _mask_array(mask, pred.grid)
    rows = np.flatnonzero(inside.reshape(-1))
    target_peaks = find_peaks_batch(target.data.reshape(-1, target.channels)[rows],
                                    max_peaks=WAAE_TARGET_PEAKS)
    pred_peaks = find_peaks_batch(pred.data.reshape(-1, pred.channels)[rows],
                                  max_peaks=WAAE_PREDICTED_PEAKS)
    out = np.zeros(inside.size)
    for row, wanted, found in zip(rows, target_peaks, pred_peaks):
        out[row] = voxel_angular_error(wanted, found)
    return out.reshape(pred.grid.shape)


def waae(pred: ChannelVolume, target: ChannelVolume, mask=None) -> float:
    """Mean of the per-voxel weighted angular error over the mask."""
    inside = _mask_array(mask, pred.grid)
    return float(waae_map(pred, target, inside)[inside].mean())


def score_odf_volumes(pred: ChannelVolume, target: ChannelVolume, mask=None,
                      degree_scales=None, mask_threshold: Optional[float] = None,
                      with_maps: bool = False) -> OdfScoreReport:
    """
    All three ODF metrics over one mask.

    Without an explicit mask, ``mask_threshold`` selects voxels by target c0;
    without either, every voxel is scored.
    """
    _check_pair(pred, target)
    if mask is None and mask_threshold is not None:
        mask = threshold_mask(target, mask_threshold)
    inside = _mask_array(mask, pred.grid)
    if degree_scales is None:
        degree_scales = np.ones(lmax_for(pred.channels) // 2 + 1)

    error = wmse(pred.data[inside], target.data[inside], degree_scales)
    jsd = msjsd_map(pred, target, mask=inside)
    angular = waae_map(pred, target, mask=inside)
    maps = {'msjsd': jsd, 'waae': angular} if with_maps else None
    report = OdfScoreReport(error, jsd[inside].mean(), angular[inside].mean(), maps,
                            int(inside.sum()))
    _LOGGER.info("Scored %d voxels: %s", report.voxels, report)
    return report


# METHODS - Tract metrics

def _dda_cells(start: np.ndarray, end: np.ndarray) -> List[np.ndarray]:
    """Cells of the unit lattice crossed by the segment start -> end."""
    cell = np.floor(start).astype(int)
    last = np.floor(end).astype(int)
    delta = end - start
    step = np.sign(delta).astype(int)
    with np.errstate(divide='ignore', invalid='ignore'):
        boundary = cell + (step > 0)
        t_max = np.where(delta != 0, (boundary - start) / delta, np.inf)
        t_delta = np.where(delta != 0, np.abs(1.0 / delta), np.inf)
    cells = [cell.copy()]
    for _ in range(int(np.abs(last - cell).sum()) + 3):
        if np.array_equal(cell, last):
            break
        axis = int(np.argmin(t_max))
        if t_max[axis] > 1.0:
            break
        cell[axis] += step[axis]
        t_max[axis] += t_delta[axis]
        cells.append(cell.copy())
    return cells


def voxelize(streamlines: StreamlineSet, grid: VolumeGrid) -> np.ndarray:
    """Voxels of ``grid`` crossed by any streamline segment."""
    covered = np.zeros(grid.shape, dtype=bool)
    shape = np.array(grid.shape)
    marked = []
    for line in streamlines:
        if len(line) == 0:
            continue
        # shift so voxel i spans [i, i+1)
        coords = grid.world_to_grid(line.points) + 0.5
        cells = np.floor(coords).astype(int)
        marked.append(cells)
        if len(line) < 2:
            continue
        jumps = np.abs(np.diff(cells, axis=0)).sum(axis=1)
        for k in np.flatnonzero(jumps > 1):
            marked.append(np.array(_dda_cells(coords[k], coords[k + 1])))
    if marked:
        cells = np.concatenate(marked, axis=0)
        inside = np.all((cells >= 0) & (cells < shape), axis=1)
        cells = cells[inside]
        covered[cells[:, 0], cells[:, 1], cells[:, 2]] = True
    return covered


def tract_scores(candidate: StreamlineSet, gt_mask: ChannelVolume,
                 bundle: str = 'bundle') -> TractScoreReport:
    """OL, OR and Dice of the voxels crossed by ``candidate`` against a bundle mask."""
    truth = gt_mask.data[..., 0] != 0
    size = int(truth.sum())
    if size == 0:
        raise InvalidArgumentError("bundle mask is empty")
    if len(candidate) == 0:
        return TractScoreReport(0.0, 0.0, 0.0, bundle, 0)
    covered = voxelize(candidate, gt_mask.grid)
    hit = int(np.sum(covered & truth))
    extra = int(np.sum(covered & ~truth))
    report = TractScoreReport(hit / size, extra / size,
                              2.0 * hit / (int(covered.sum()) + size), bundle, len(candidate))
    _LOGGER.info("Scored %s", report)
    return report
