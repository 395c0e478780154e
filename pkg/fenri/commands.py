"""
Pipeline stages run by the command line.

Every stage reads and writes files below a run directory laid out as::

    <run>/config.yaml            resolved settings of the last stage run
    <run>/scheme.bval|.bvec      full acquisition scheme
    <run>/scheme_lr.bval|.bvec   degraded acquisition scheme
    <run>/model.pt, loss.tsv     checkpoint and per-step training loss
    <run>/subject_<k>/           one directory per phantom variant

Outputs are written to a temporary file next to their destination and
moved into place once complete.
"""

import logging
import os
import re
import tempfile
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from fenri import formats
from fenri.config import Config
from fenri.exceptions import ConfigError, InvalidArgumentError
from fenri.field import build_model, predict_volume
from fenri.metrics import TractScoreReport, score_odf_volumes, tract_scores, tract_table
from fenri.phantom import (
    default_scheme, degrade, ground_truth_streamlines, ground_truth_volume, normalize_by_b0,
    phantom_variants, select_first, simulate_dwi, streamline_seeds)
from fenri.tracking import FenriField, TrilinearSHField, track_all
from fenri.training import compute_degree_statistics, train
from fenri.volume import ChannelVolume, VolumeGrid, block_downsample, resample_volume

_LOGGER = logging.getLogger(__name__)

CONFIG_SNAPSHOT = 'config.yaml'
SCHEME_FILES = ('scheme.bval', 'scheme.bvec')
DEGRADED_SCHEME_FILES = ('scheme_lr.bval', 'scheme_lr.bvec')
CHECKPOINT_FILE = 'model.pt'
LOSS_FILE = 'loss.tsv'

SUBJECT_DIR = 'subject_{}'
SUBJECT_PATTERN = re.compile(r'^subject_(\d+)$')
PHANTOM_FILE = 'phantom.yaml'
DWI_FILE = 'dwi.nii'
FODF_FILE = 'fodf.nii'
DWI_LR_FILE = 'dwi_lr.nii'
FODF_LR_FILE = 'fodf_lr.nii'
FODF_FENRI_FILE = 'fodf_fenri.nii'
FODF_TRILINEAR_FILE = 'fodf_trilinear.nii'
MASK_FILE = '{}_mask.nii'
TRUTH_TCK_FILE = '{}_truth.tck'
SEEDS_FILE = '{}_seeds.txt'

ODF_SCORES_FILE = 'odf_scores.tsv'
TRACT_SCORES_FILE = 'tract_scores.tsv'
MAP_FILE = '{}_map.nii'


# METHODS - Helpers

def write_atomic(path: str, writer: Callable[[str], None]) -> str:
    """Run ``writer`` on a temporary sibling of ``path``, then move it into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    stem, suffix = os.path.splitext(os.path.basename(path))
    handle, temp = tempfile.mkstemp(prefix='.{}-'.format(stem), suffix=suffix, dir=directory)
    os.close(handle)
    try:
        writer(temp)
        os.replace(temp, path)
    except BaseException:
        if os.path.exists(temp):
            os.remove(temp)
        raise
    return path


def snapshot_config(config: Config, directory: str) -> str:
    """Write the resolved settings into ``directory``."""
    return write_atomic(os.path.join(directory, CONFIG_SNAPSHOT), config.dump)


def derived_seed(seed: int, *keys: int) -> int:
    """Independent, reproducible seed for one (subject, bundle, ...) combination."""
    return int(np.random.SeedSequence([int(seed)] + [int(k) for k in keys]).generate_state(1)[0])


def subject_dirs(run_dir: str) -> List[Tuple[int, str]]:
    """(index, path) of every subject directory, by index."""
    if not os.path.isdir(run_dir):
        raise InvalidArgumentError("run directory '{}' does not exist".format(run_dir))
    found = []
    for name in os.listdir(run_dir):
        match = SUBJECT_PATTERN.match(name)
        if match and os.path.isdir(os.path.join(run_dir, name)):
            found.append((int(match.group(1)), os.path.join(run_dir, name)))
    if not found:
        raise InvalidArgumentError("no subject directories in '{}'".format(run_dir))
    return sorted(found)


def subject_dir(run_dir: str, index: int) -> str:
    path = os.path.join(run_dir, SUBJECT_DIR.format(index))
    if not os.path.isdir(path):
        raise InvalidArgumentError("subject {} is missing from '{}'".format(index, run_dir))
    return path


def grid_with_voxel(grid: VolumeGrid, voxel_size: Optional[float]) -> VolumeGrid:
    """``grid``'s field of view resampled at ``voxel_size``; ``grid`` itself for None."""
    if voxel_size is None or np.isclose(voxel_size, grid.voxel_size[0]):
        return grid
    return grid.downsampled(float(voxel_size) / float(grid.voxel_size[0]))


def _write_volume(volume: ChannelVolume, path: str) -> str:
    return write_atomic(path, lambda temp: formats.write_nifti(volume, temp))


def _write_scheme(scheme, directory: str, names: Sequence[str]) -> List[str]:
    bvals, bvecs = (os.path.join(directory, name) for name in names)

    def _writer(temp_bvals):
        write_atomic(bvecs, lambda temp_bvecs: formats.write_scheme(scheme, temp_bvals,
                                                                    temp_bvecs))
    write_atomic(bvals, _writer)
    return [bvals, bvecs]


def _read_scheme(directory: str, names: Sequence[str]):
    return formats.read_scheme(*(os.path.join(directory, name) for name in names))


# METHODS - Stages

def cmd_simulate(config: Config) -> List[str]:
    """Phantom DWIs, ground-truth SH volumes, bundle masks, streamlines and seeds."""
    run_dir = config.run.output
    seed = config.run.seed
    base = config.phantom.build()
    if not base.bundles:
        raise ConfigError("phantom.bundles must describe at least one bundle")
    variants = phantom_variants(base, config.phantom.subjects, config.phantom.jitter, seed)
    scheme = default_scheme(config.scheme.b0, config.scheme.shells, config.scheme.directions,
                            seed)
    _LOGGER.info("Simulating %d subject(s) with %d volumes each", len(variants), len(scheme))

    written = _write_scheme(scheme, run_dir, SCHEME_FILES)
    for index, phantom in enumerate(variants):
        directory = os.path.join(run_dir, SUBJECT_DIR.format(index))
        written.append(write_atomic(
            os.path.join(directory, PHANTOM_FILE),
            lambda temp: _dump_yaml(phantom.as_dict(), temp)))
        written.append(_write_volume(simulate_dwi(phantom, scheme),
                                     os.path.join(directory, DWI_FILE)))
        written.append(_write_volume(ground_truth_volume(phantom),
                                     os.path.join(directory, FODF_FILE)))
        for number, bundle in enumerate(phantom.bundles):
            written.append(_write_volume(phantom.bundle_mask(bundle.name),
                                         os.path.join(directory, MASK_FILE.format(bundle.name))))
            truth = ground_truth_streamlines(bundle, config.phantom.streamlines,
                                             derived_seed(seed, index, number))
            written.append(write_atomic(os.path.join(directory, TRUTH_TCK_FILE.format(bundle.name)),
                                        lambda temp: formats.write_tck(truth, temp)))
            written.append(write_atomic(os.path.join(directory, SEEDS_FILE.format(bundle.name)),
                                        lambda temp: formats.write_seeds(
                                            streamline_seeds(truth), temp)))
        _LOGGER.info("Subject %d written to %s", index, directory)
    written.append(snapshot_config(config, run_dir))
    return written


def _dump_yaml(values: dict, path: str) -> None:
    with open(path, 'wt', encoding='utf-8') as handle:
        yaml.safe_dump(values, handle, sort_keys=False, default_flow_style=None)


def cmd_degrade(config: Config, run_dir: Optional[str] = None) -> List[str]:
    """Clinical-style DWIs and block-averaged ground truth for every subject."""
    run_dir = run_dir or config.run.output
    settings = config.degrade
    scheme = _read_scheme(run_dir, SCHEME_FILES)
    keep = select_first(scheme, settings.keep_b0, settings.keep_per_shell)
    reduced = scheme.select(keep)
    if settings.normalize_b0 and not np.any(reduced.b0_mask):
        raise ConfigError("degrade.normalize_b0 needs degrade.keep_b0 >= 1")

    written = _write_scheme(reduced, run_dir, DEGRADED_SCHEME_FILES)
    for index, directory in subject_dirs(run_dir):
        dwi = formats.read_nifti(os.path.join(directory, DWI_FILE))
        fodf = formats.read_nifti(os.path.join(directory, FODF_FILE))
        low, low_scheme = degrade(dwi, scheme, settings.voxel_size, keep, settings.snr_db,
                                  derived_seed(config.run.seed, index))
        if settings.normalize_b0:
            low = normalize_by_b0(low, low_scheme)
        factor = 1.0 if settings.voxel_size is None \
            else settings.voxel_size / float(fodf.grid.voxel_size[0])
        written.append(_write_volume(low, os.path.join(directory, DWI_LR_FILE)))
        written.append(_write_volume(block_downsample(fodf, factor),
                                     os.path.join(directory, FODF_LR_FILE)))
    written.append(snapshot_config(config, run_dir))
    return written


def cmd_train(config: Config, run_dir: Optional[str] = None) -> List[str]:
    """Fit a model on the training subjects; writes the checkpoint and loss history."""
    run_dir = run_dir or config.run.output
    held_out = set(config.training.subjects) & set(config.predict.subjects)
    if held_out:
        _LOGGER.warning("Subjects %s are used for training and prediction", sorted(held_out))

    dataset = []
    for index in config.training.subjects:
        directory = subject_dir(run_dir, index)
        dataset.append((formats.read_nifti(os.path.join(directory, DWI_LR_FILE)),
                        formats.read_nifti(os.path.join(directory, FODF_FILE))))
    means, scales = compute_degree_statistics([target for _, target in dataset])

    model = build_model(config.model.encoder_config(dataset[0][0].channels),
                        config.model.decoder_config(), seed=config.run.seed)
    model.set_statistics(means, scales)
    model, history = train(model, dataset, config.training.train_config(config.run.seed))

    written = [write_atomic(os.path.join(run_dir, CHECKPOINT_FILE),
                            lambda temp: formats.save_checkpoint(model, temp))]
    lines = ['step\twmse'] + ["{}\t{!r}".format(step, value) for step, value in enumerate(history)]
    written.append(write_atomic(os.path.join(run_dir, LOSS_FILE),
                                lambda temp: _write_text('\n'.join(lines) + '\n', temp)))
    written.append(snapshot_config(config, run_dir))
    return written


def _write_text(text: str, path: str) -> None:
    with open(path, 'wt', encoding='utf-8') as handle:
        handle.write(text)


def _target_grid(config: Config, like: Optional[str], fallback: VolumeGrid) -> VolumeGrid:
    if like:
        return formats.read_nifti(like).grid
    return grid_with_voxel(fallback, config.predict.voxel_size)


def cmd_predict(config: Config, checkpoint: Optional[str] = None, dwi: Optional[str] = None,
                like: Optional[str] = None, output: Optional[str] = None,
                run_dir: Optional[str] = None) -> List[str]:
    """
    SH volumes decoded by a trained model.

    With ``dwi`` one volume is predicted on the grid of ``like`` (or the DWI
    grid at predict.voxel_size) into ``output``; otherwise every prediction
    subject of the run is predicted on its ground-truth grid.
    """
    run_dir = run_dir or config.run.output
    model = formats.load_checkpoint(checkpoint or os.path.join(run_dir, CHECKPOINT_FILE))
    if dwi:
        if not output:
            raise InvalidArgumentError("an output path is required with an explicit DWI")
        source = formats.read_nifti(dwi)
        volume = predict_volume(model, source, _target_grid(config, like, source.grid))
        written = [_write_volume(volume, output)]
        written.append(snapshot_config(config, os.path.dirname(os.path.abspath(output))))
        return written

    written = []
    for index in config.predict.subjects:
        directory = subject_dir(run_dir, index)
        source = formats.read_nifti(os.path.join(directory, DWI_LR_FILE))
        truth = formats.read_nifti(os.path.join(directory, FODF_FILE))
        volume = predict_volume(model, source, _target_grid(config, like, truth.grid))
        written.append(_write_volume(volume, os.path.join(directory, FODF_FENRI_FILE)))
        _LOGGER.info("Predicted subject %d on %s", index, volume.grid)
    written.append(snapshot_config(config, run_dir))
    return written


def cmd_upsample(config: Config, sh: Optional[str] = None, like: Optional[str] = None,
                 output: Optional[str] = None, run_dir: Optional[str] = None) -> List[str]:
    """Trilinear upsampling of low-resolution SH volumes, the baseline for scoring and tracking."""
    run_dir = run_dir or config.run.output
    if sh:
        if not output:
            raise InvalidArgumentError("an output path is required with an explicit SH volume")
        source = formats.read_nifti(sh)
        volume = resample_volume(source, _target_grid(config, like, source.grid))
        written = [_write_volume(volume, output)]
        written.append(snapshot_config(config, os.path.dirname(os.path.abspath(output))))
        return written

    written = []
    for index in config.predict.subjects:
        directory = subject_dir(run_dir, index)
        source = formats.read_nifti(os.path.join(directory, FODF_LR_FILE))
        truth = formats.read_nifti(os.path.join(directory, FODF_FILE))
        volume = resample_volume(source, _target_grid(config, like, truth.grid))
        written.append(_write_volume(volume, os.path.join(directory, FODF_TRILINEAR_FILE)))
    written.append(snapshot_config(config, run_dir))
    return written


def cmd_track(config: Config, seeds: str, output: str, checkpoint: Optional[str] = None,
              dwi: Optional[str] = None, sh: Optional[str] = None,
              voxel_size: Optional[float] = None) -> List[str]:
    """
    Deterministic tracking from a seed file through a FENRI field (checkpoint
    and DWI) or a trilinearly interpolated SH volume.
    """
    if bool(sh) == bool(checkpoint or dwi):
        raise InvalidArgumentError("track needs either an SH volume or a checkpoint and a DWI")
    if sh:
        field = TrilinearSHField(formats.read_nifti(sh))
        default_voxel = float(field.grid.voxel_size[0])
    else:
        if not (checkpoint and dwi):
            raise InvalidArgumentError("a FENRI field needs both a checkpoint and a DWI")
        field = FenriField.from_dwi(formats.load_checkpoint(checkpoint), formats.read_nifti(dwi))
        default_voxel = config.predict.voxel_size or float(field.grid.voxel_size[0])
    params = config.tracking.params(voxel_size or default_voxel)
    _LOGGER.info("Tracking %s with %s", field, params)

    streamlines = track_all(field, formats.read_seeds(seeds), params, workers=config.run.threads)
    written = [write_atomic(output, lambda temp: formats.write_tck(streamlines, temp))]
    written.append(snapshot_config(config, os.path.dirname(os.path.abspath(output))))
    return written


def cmd_score_odf(config: Config, pred: str, target: str, output_dir: str,
                  mask: Optional[str] = None, checkpoint: Optional[str] = None,
                  maps: bool = False):
    """
    WMSE, MSJSD and WAAE of a predicted SH volume against its target.

    Degree scales come from ``checkpoint`` when given, else from the target.
    Without ``mask`` voxels are selected by scoring.mask_threshold.
    """
    predicted = formats.read_nifti(pred)
    truth = formats.read_nifti(target)
    if checkpoint:
        scales = formats.load_checkpoint(checkpoint).degree_scales.numpy()
    else:
        scales = compute_degree_statistics([truth])[1]
    mask_volume = formats.read_nifti(mask) if mask else None
    report = score_odf_volumes(predicted, truth, mask=mask_volume, degree_scales=scales,
                               mask_threshold=config.scoring.mask_threshold, with_maps=maps)

    written = [write_atomic(os.path.join(output_dir, ODF_SCORES_FILE),
                            lambda temp: _write_text(report.as_tsv(), temp))]
    for name, values in sorted(report.maps.items()):
        written.append(_write_volume(ChannelVolume(truth.grid, values),
                                     os.path.join(output_dir, MAP_FILE.format(name))))
    written.append(snapshot_config(config, output_dir))
    return report, written


def bundle_name(mask_path: str) -> str:
    """Bundle name from a '<name>_mask.nii' file name."""
    stem = os.path.splitext(os.path.basename(mask_path))[0]
    return stem[:-len('_mask')] if stem.endswith('_mask') else stem


def cmd_score_tracts(config: Config, pairs: Sequence[Tuple[str, str]], output_dir: str):
    """OL, OR and Dice of each (tractogram, bundle mask) pair, tabulated by bundle."""
    if not pairs:
        raise InvalidArgumentError("no tractogram/mask pair to score")
    reports = []  # type: List[TractScoreReport]
    for tck, mask in pairs:
        reports.append(tract_scores(formats.read_tck(tck), formats.read_nifti(mask),
                                    bundle_name(mask)))
    table = tract_table(reports)
    written = [write_atomic(os.path.join(output_dir, TRACT_SCORES_FILE),
                            lambda temp: _write_text(table, temp))]
    written.append(snapshot_config(config, output_dir))
    return reports, written
