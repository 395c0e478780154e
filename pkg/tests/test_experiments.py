"""
Scaled-down experiments on the default two-bundle phantom.

These train a full model on the CPU and take several minutes; run them
with ``pytest -m slow``.
"""

import os

import pytest

from fenri import commands, formats
from fenri.config import Config

pytestmark = pytest.mark.slow


@pytest.fixture(scope='module')
def trained_run(tmp_path_factory):
    base = tmp_path_factory.mktemp('experiment')
    config = Config.load(str(base / 'config.yaml'), {'run.output': str(base / 'run')})
    commands.cmd_simulate(config)
    commands.cmd_degrade(config)
    commands.cmd_train(config)
    commands.cmd_predict(config)
    commands.cmd_upsample(config)
    return config, str(base / 'run')


def test_prediction_beats_trilinear_upsampling(trained_run, tmp_path):
    config, run_dir = trained_run
    checkpoint = os.path.join(run_dir, 'model.pt')
    for index in config.predict.subjects:
        subject = os.path.join(run_dir, 'subject_{}'.format(index))
        target = os.path.join(subject, 'fodf.nii')
        fenri, _ = commands.cmd_score_odf(config, os.path.join(subject, 'fodf_fenri.nii'),
                                          target, str(tmp_path / 'fenri'), checkpoint=checkpoint)
        baseline, _ = commands.cmd_score_odf(config, os.path.join(subject, 'fodf_trilinear.nii'),
                                             target, str(tmp_path / 'trilinear'),
                                             checkpoint=checkpoint)
        assert fenri.wmse <= 0.9 * baseline.wmse
        assert fenri.msjsd <= 0.9 * baseline.msjsd
        assert fenri.waae <= 0.9 * baseline.waae


def test_tracking_the_curved_bundle(trained_run, tmp_path):
    config, run_dir = trained_run
    subject = os.path.join(run_dir, 'subject_{}'.format(config.predict.subjects[0]))
    seeds = os.path.join(subject, 'arc_seeds.txt')
    mask = os.path.join(subject, 'arc_mask.nii')
    voxel = config.phantom.voxel_size

    fenri_tracks = str(tmp_path / 'fenri.tck')
    commands.cmd_track(config, seeds, fenri_tracks,
                       checkpoint=os.path.join(run_dir, 'model.pt'),
                       dwi=os.path.join(subject, 'dwi_lr.nii'), voxel_size=voxel)
    baseline_tracks = str(tmp_path / 'trilinear.tck')
    commands.cmd_track(config, seeds, baseline_tracks,
                       sh=os.path.join(subject, 'fodf_trilinear.nii'), voxel_size=voxel)

    (fenri, baseline), _ = commands.cmd_score_tracts(
        config, [(fenri_tracks, mask), (baseline_tracks, mask)], str(tmp_path))
    assert fenri.ol >= 0.8
    assert fenri.dice >= 0.75
    assert fenri.dice >= baseline.dice
    assert len(formats.read_tck(fenri_tracks)) > 0
