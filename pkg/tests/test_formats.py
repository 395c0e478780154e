import struct

import nibabel as nib
import numpy as np
import pytest
import torch

from fenri.exceptions import CorruptFileError, InvalidArgumentError, UnsupportedFormatError
from fenri.formats import (
    load_checkpoint, read_nifti, read_scheme, read_seeds, read_tck, save_checkpoint,
    write_nifti, write_scheme, write_seeds, write_tck)
from fenri.phantom import AcquisitionScheme
from fenri.tracking import Streamline, StreamlineSet
from fenri.volume import ChannelVolume


class TestNifti:

    def test_round_trip(self, sh_volume, tmp_path):
        path = str(tmp_path / 'fodf.nii')
        write_nifti(sh_volume, path)
        loaded = read_nifti(path)
        assert loaded.grid.matches(sh_volume.grid)
        assert loaded.data.dtype == np.float32
        np.testing.assert_array_equal(loaded.data, sh_volume.data.astype(np.float32))

    def test_single_channel_is_3d(self, small_grid, tmp_path):
        path = str(tmp_path / 'mask.nii')
        write_nifti(ChannelVolume(small_grid, np.ones(small_grid.shape)), path)
        assert nib.load(path).shape == small_grid.shape
        assert read_nifti(path).channels == 1

    @pytest.mark.parametrize('name', ['volume.nii.gz', 'volume.img', 'volume'])
    def test_rejects_other_containers(self, sh_volume, tmp_path, name):
        with pytest.raises(UnsupportedFormatError):
            write_nifti(sh_volume, str(tmp_path / name))
        with pytest.raises(UnsupportedFormatError):
            read_nifti(str(tmp_path / name))

    def test_rejects_float64(self, small_grid, tmp_path):
        path = str(tmp_path / 'double.nii')
        nib.save(nib.Nifti1Image(np.zeros(small_grid.shape), small_grid.affine), path)
        with pytest.raises(UnsupportedFormatError):
            read_nifti(path)

    def test_rejects_big_endian(self, tmp_path):
        path = tmp_path / 'big.nii'
        path.write_bytes(struct.pack('>i', 348) + bytes(400))
        with pytest.raises(UnsupportedFormatError):
            read_nifti(str(path))

    @pytest.mark.parametrize('content', [b'', b'\x01\x02', b'not a nifti header at all'])
    def test_corrupt(self, tmp_path, content):
        path = tmp_path / 'broken.nii'
        path.write_bytes(content)
        with pytest.raises(CorruptFileError):
            read_nifti(str(path))

    def test_truncated(self, sh_volume, tmp_path):
        path = tmp_path / 'cut.nii'
        write_nifti(sh_volume, str(path))
        path.write_bytes(path.read_bytes()[:600])
        with pytest.raises(CorruptFileError):
            read_nifti(str(path))

    def test_missing(self, tmp_path):
        with pytest.raises(CorruptFileError):
            read_nifti(str(tmp_path / 'absent.nii'))


class TestTck:

    @pytest.fixture
    def lines(self):
        return StreamlineSet([
            Streamline([[0.0, 0.0, 0.0], [1.0, 0.5, 0.0], [2.0, 1.0, 0.25]]),
            Streamline([[-3.5, 2.0, 1.0], [-3.0, 2.0, 1.5]]),
        ])

    def test_round_trip(self, lines, tmp_path):
        path = str(tmp_path / 'tracks.tck')
        write_tck(lines, path)
        loaded = read_tck(path)
        assert len(loaded) == 2
        for original, restored in zip(lines, loaded):
            np.testing.assert_allclose(restored.points, original.points, atol=1e-6)

    def test_every_streamline_is_terminated(self, tmp_path):
        lines = StreamlineSet([Streamline(np.arange(15.0).reshape(5, 3)),
                               Streamline(np.arange(21.0).reshape(7, 3))])
        path = tmp_path / 'tracks.tck'
        write_tck(lines, str(path))
        raw = path.read_bytes()
        header = raw[:raw.index(b'\nEND\n')].decode('latin-1').splitlines()
        offset = int(next(line for line in header if line.startswith('file:')).split()[-1])
        triplets = np.frombuffer(raw[offset:], dtype='<f4').reshape(-1, 3)
        assert triplets.shape[0] == 15
        assert [int(row) for row in np.flatnonzero(np.isnan(triplets).all(axis=1))] == [5, 13]
        assert np.isinf(triplets[-1]).all()

    def test_empty(self, tmp_path):
        path = str(tmp_path / 'none.tck')
        write_tck(StreamlineSet(), path)
        assert len(read_tck(path)) == 0

    def test_missing_terminator(self, lines, tmp_path):
        path = tmp_path / 'cut.tck'
        write_tck(lines, str(path))
        path.write_bytes(path.read_bytes()[:-12])
        with pytest.raises(CorruptFileError):
            read_tck(str(path))

    def test_partial_triplet(self, lines, tmp_path):
        path = tmp_path / 'odd.tck'
        write_tck(lines, str(path))
        path.write_bytes(path.read_bytes() + b'\x00\x00')
        with pytest.raises(CorruptFileError):
            read_tck(str(path))

    def test_not_a_tck(self, tmp_path):
        path = tmp_path / 'plain.tck'
        path.write_bytes(b'hello\nEND\n')
        with pytest.raises(CorruptFileError):
            read_tck(str(path))

    def test_other_datatype(self, tmp_path):
        path = tmp_path / 'double.tck'
        path.write_bytes(b'mrtrix tracks\ndatatype: Float64LE\ncount: 0\nfile: . 60\nEND\n'
                         + bytes(40))
        with pytest.raises(UnsupportedFormatError):
            read_tck(str(path))


class TestScheme:

    def test_round_trip(self, small_scheme, tmp_path):
        bvals, bvecs = str(tmp_path / 'dwi.bval'), str(tmp_path / 'dwi.bvec')
        write_scheme(small_scheme, bvals, bvecs)
        loaded = read_scheme(bvals, bvecs)
        np.testing.assert_array_equal(loaded.bvalues, small_scheme.bvalues)
        np.testing.assert_allclose(loaded.gradients, small_scheme.gradients, atol=1e-9)

    def test_axis_rows(self, tmp_path):
        bvals, bvecs = tmp_path / 'dwi.bval', tmp_path / 'dwi.bvec'
        bvals.write_text('0 1000 1000 2000\n')
        bvecs.write_text('0 1 0 0\n0 0 2 0\n0 0 0 1\n')
        scheme = read_scheme(str(bvals), str(bvecs))
        np.testing.assert_allclose(scheme.gradients[2], [0.0, 1.0, 0.0])
        np.testing.assert_allclose(scheme.gradients[3], [0.0, 0.0, 1.0])
        assert list(scheme.b0_mask) == [True, False, False, False]

    def test_zero_gradient_is_b0(self, tmp_path):
        bvals, bvecs = tmp_path / 'dwi.bval', tmp_path / 'dwi.bvec'
        bvals.write_text('5 1000\n')
        bvecs.write_text('0 0 0\n1 0 0\n')
        scheme = read_scheme(str(bvals), str(bvecs))
        assert list(scheme.bvalues) == [0.0, 1000.0]

    def test_count_mismatch(self, tmp_path):
        bvals, bvecs = tmp_path / 'dwi.bval', tmp_path / 'dwi.bvec'
        bvals.write_text('0 1000\n')
        bvecs.write_text('0 0 0\n1 0 0\n0 1 0\n0 0 1\n')
        with pytest.raises(InvalidArgumentError):
            read_scheme(str(bvals), str(bvecs))

    def test_unreadable(self, tmp_path):
        bvals, bvecs = tmp_path / 'dwi.bval', tmp_path / 'dwi.bvec'
        bvals.write_text('zero one\n')
        bvecs.write_text('0 0 0\n')
        with pytest.raises(CorruptFileError):
            read_scheme(str(bvals), str(bvecs))


class TestSeeds:

    def test_round_trip(self, tmp_path, rng):
        seeds = rng.uniform(-10, 10, (7, 3))
        path = str(tmp_path / 'seeds.txt')
        write_seeds(seeds, path)
        np.testing.assert_allclose(read_seeds(path), seeds, atol=1e-6)

    def test_single_seed(self, tmp_path):
        path = tmp_path / 'seed.txt'
        path.write_text('1 2 3\n')
        assert read_seeds(str(path)).shape == (1, 3)

    def test_bad_columns(self, tmp_path):
        path = tmp_path / 'seeds.txt'
        path.write_text('1 2\n3 4\n')
        with pytest.raises(CorruptFileError):
            read_seeds(str(path))


class TestCheckpoint:

    def test_round_trip(self, tiny_model, tmp_path):
        model = tiny_model()
        model.set_statistics(np.linspace(0.1, 0.5, 5), np.linspace(1.0, 2.0, 5))
        path = str(tmp_path / 'model.pt')
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert not loaded.training
        assert loaded.dtype == torch.float32
        assert loaded.encoder_cfg.as_dict() == model.encoder_cfg.as_dict()
        assert loaded.decoder_cfg.as_dict() == model.decoder_cfg.as_dict()
        for name, tensor in model.state_dict().items():
            expected = tensor.to(torch.float32) if tensor.is_floating_point() else tensor
            assert torch.equal(loaded.state_dict()[name], expected), name

    def test_foreign_payload(self, tmp_path):
        path = str(tmp_path / 'other.pt')
        torch.save({'format': 'something-else', 'version': 1}, path)
        with pytest.raises(UnsupportedFormatError):
            load_checkpoint(path)

    def test_future_version(self, tiny_model, tmp_path):
        path = str(tmp_path / 'model.pt')
        save_checkpoint(tiny_model(), path)
        payload = torch.load(path, weights_only=True)
        payload['version'] = 99
        torch.save(payload, path)
        with pytest.raises(UnsupportedFormatError):
            load_checkpoint(path)

    def test_inconsistent_state(self, tiny_model, tmp_path):
        path = str(tmp_path / 'model.pt')
        save_checkpoint(tiny_model(), path)
        payload = torch.load(path, weights_only=True)
        payload['decoder']['hidden_width'] = 7
        torch.save(payload, path)
        with pytest.raises(CorruptFileError):
            load_checkpoint(path)

    def test_garbage(self, tmp_path):
        path = tmp_path / 'model.pt'
        path.write_bytes(b'not a checkpoint')
        with pytest.raises(CorruptFileError):
            load_checkpoint(str(path))
        with pytest.raises(CorruptFileError):
            load_checkpoint(str(tmp_path / 'absent.pt'))
