"""
Readers and writers for volumes (NIfTI-1, float32, little-endian), streamlines
(MRtrix TCK), acquisition schemes (b-value and gradient text files), seed
lists and model checkpoints.

Every failure to read is reported as :class:`UnsupportedFormatError` (valid
file using a feature outside this subset) or :class:`CorruptFileError`.
"""

import logging
import os
import struct
from typing import Tuple

import nibabel as nib
import numpy as np
import torch
from nibabel.filebasedimages import ImageFileError
from nibabel.spatialimages import HeaderDataError

from fenri.const import CHECKPOINT_FORMAT, CHECKPOINT_VERSION
from fenri.exceptions import CorruptFileError, InvalidArgumentError, UnsupportedFormatError
from fenri.field import DecoderConfig, EncoderConfig, FenriModel
from fenri.phantom import AcquisitionScheme
from fenri.tracking import Streamline, StreamlineSet
from fenri.volume import ChannelVolume, VolumeGrid

_LOGGER = logging.getLogger(__name__)

NIFTI_HEADER_SIZE = 348

TCK_MAGIC = 'mrtrix tracks'
TCK_DATATYPE = 'Float32LE'

# Largest relative deviation from unit norm accepted silently in gradient files
GRADIENT_NORM_TOLERANCE = 1e-4


# METHODS - NIfTI

def _check_nifti_path(path: str) -> None:
    if str(path).endswith('.gz'):
        raise UnsupportedFormatError("compressed NIfTI is not supported: {}".format(path))
    if not str(path).endswith('.nii'):
        raise UnsupportedFormatError("expected a single-file .nii volume: {}".format(path))


def write_nifti(v: ChannelVolume, path: str) -> None:
    """Write a float32 NIfTI-1 file; single-channel volumes are stored as 3D."""
    _check_nifti_path(path)
    data = v.data.astype(np.float32)
    if v.channels == 1:
        data = data[..., 0]
    image = nib.Nifti1Image(data, v.grid.affine)
    image.header.set_data_dtype(np.float32)
    image.header.set_xyzt_units('mm', 'sec')
    image.set_sform(v.grid.affine, code='scanner')
    image.set_qform(v.grid.affine, code='scanner')
    nib.save(image, path)
    _LOGGER.debug("Wrote %s to %s", v, path)


def read_nifti(path: str) -> ChannelVolume:
    """Read a float32 NIfTI-1 file; the 4th dimension becomes channels."""
    _check_nifti_path(path)
    try:
        with open(path, 'rb') as handle:
            prefix = handle.read(4)
    except OSError as ex:
        raise CorruptFileError("cannot read {}: {}".format(path, ex)) from ex
    if len(prefix) < 4:
        raise CorruptFileError("{} is too short for a NIfTI header".format(path))
    if struct.unpack('<i', prefix)[0] != NIFTI_HEADER_SIZE:
        if struct.unpack('>i', prefix)[0] == NIFTI_HEADER_SIZE:
            raise UnsupportedFormatError("big-endian NIfTI is not supported: {}".format(path))
        raise CorruptFileError("{} does not start with a NIfTI-1 header".format(path))

    try:
        image = nib.load(path, mmap=False)
        if not isinstance(image, nib.Nifti1Image):
            raise UnsupportedFormatError("{} is not a NIfTI-1 image".format(path))
        dtype = image.header.get_data_dtype()
        if dtype != np.dtype('<f4'):
            raise UnsupportedFormatError("{} stores {}; only float32 is supported".format(
                path, dtype))
        data = np.asarray(image.dataobj.get_unscaled())
    except (ImageFileError, HeaderDataError, EOFError, OSError, ValueError) as ex:
        raise CorruptFileError("cannot read {}: {}".format(path, ex)) from ex

    slope, inter = image.header.get_slope_inter()
    if slope is not None and (slope, inter or 0.0) != (1.0, 0.0):
        data = (data * np.float32(slope) + np.float32(inter or 0.0)).astype(np.float32)
    if data.ndim not in (3, 4):
        raise UnsupportedFormatError("{} has {} dimensions; 3 or 4 are supported".format(
            path, data.ndim))
    grid = VolumeGrid.from_affine(data.shape[:3], image.affine)
    try:
        return ChannelVolume(grid, data)
    except InvalidArgumentError as ex:
        raise CorruptFileError("{}: {}".format(path, ex)) from ex


# METHODS - TCK

def _tck_header(raw: bytes, path: str) -> Tuple[dict, int]:
    end = raw.find(b'\nEND\n')
    if not raw.startswith(TCK_MAGIC.encode()) or end < 0:
        raise CorruptFileError("{} lacks a TCK header".format(path))
    fields = {}
    for line in raw[:end].decode('latin-1').splitlines()[1:]:
        key, _, value = line.partition(':')
        fields[key.strip()] = value.strip()
    if fields.get('datatype') != TCK_DATATYPE:
        raise UnsupportedFormatError("{} stores {}; only {} is supported".format(
            path, fields.get('datatype'), TCK_DATATYPE))
    try:
        offset = int(fields['file'].split()[-1])
        count = int(fields['count'])
    except (KeyError, ValueError, IndexError) as ex:
        raise CorruptFileError("{} has a broken file/count field".format(path)) from ex
    if offset < end + 5 or offset > len(raw):
        raise CorruptFileError("{} declares data offset {} inside its header".format(path, offset))
    return fields, offset


def write_tck(s: StreamlineSet, path: str) -> None:
    """
    Write streamlines in world mm; each is followed by a NaN triplet, the file by Inf.

    The last streamline keeps its NaN before the Inf, so 5 and 7 point
    streamlines take 15 triplets rather than 14.
    """
    tractogram = nib.streamlines.Tractogram(
        [line.points.astype(np.float32) for line in s], affine_to_rasmm=np.eye(4))
    nib.streamlines.save(tractogram, path)
    _LOGGER.debug("Wrote %d streamlines to %s", len(s), path)


def read_tck(path: str) -> StreamlineSet:
    """
    Read a TCK file after validating its header, terminator and count.

    One NaN triplet per declared streamline is required, the last one
    included; separator-only layouts fail the count check.
    """
    try:
        with open(path, 'rb') as handle:
            raw = handle.read()
    except OSError as ex:
        raise CorruptFileError("cannot read {}: {}".format(path, ex)) from ex
    fields, offset = _tck_header(raw, path)
    body = raw[offset:]
    if len(body) % 12:
        raise CorruptFileError("{} body is not a whole number of triplets".format(path))
    triplets = np.frombuffer(body, dtype='<f4').reshape(-1, 3)
    if triplets.shape[0] == 0 or not np.all(np.isinf(triplets[-1])):
        raise CorruptFileError("{} is missing its end-of-file marker".format(path))
    separators = int(np.sum(np.all(np.isnan(triplets[:-1]), axis=1)))
    if separators != int(fields['count']):
        raise CorruptFileError("{} declares {} streamlines but holds {}".format(
            path, fields['count'], separators))

    try:
        loaded = nib.streamlines.load(path)
    except Exception as ex:
        raise CorruptFileError("cannot read {}: {}".format(path, ex)) from ex
    return StreamlineSet([Streamline(points) for points in loaded.streamlines])


# METHODS - Acquisition schemes

def read_scheme(bvals_path: str, bvecs_path: str) -> AcquisitionScheme:
    """
    Read whitespace-delimited b-values and gradients.

    Gradients may be stored one row per volume or one row per axis. Zero
    gradients mark b0 volumes; non-unit gradients are normalised.
    """
    try:
        bvalues = np.loadtxt(bvals_path, dtype=np.float64, ndmin=1).reshape(-1)
        vectors = np.loadtxt(bvecs_path, dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as ex:
        raise CorruptFileError("cannot read scheme files: {}".format(ex)) from ex
    if vectors.shape[1] != 3 and vectors.shape[0] == 3:
        vectors = vectors.T
    if vectors.shape[1] != 3:
        raise InvalidArgumentError("gradient file must hold 3 components per volume")
    if vectors.shape[0] != bvalues.shape[0]:
        raise InvalidArgumentError("{} b-values but {} gradients".format(
            bvalues.shape[0], vectors.shape[0]))

    norms = np.linalg.norm(vectors, axis=1)
    zero = norms == 0
    bvalues = np.where(zero, 0.0, bvalues)
    off = ~zero & (np.abs(norms - 1.0) > GRADIENT_NORM_TOLERANCE)
    if np.any(off):
        _LOGGER.warning("Normalising %d non-unit gradient(s) from %s", int(off.sum()), bvecs_path)
    vectors = np.where(zero[:, None], 0.0, vectors / np.where(zero, 1.0, norms)[:, None])
    return AcquisitionScheme(bvalues, vectors)


def write_scheme(scheme: AcquisitionScheme, bvals_path: str, bvecs_path: str) -> None:
    """Write b-values on one line and gradients one row per volume."""
    np.savetxt(bvals_path, scheme.bvalues[None, :], fmt='%g')
    np.savetxt(bvecs_path, scheme.gradients, fmt='%.10f')


# METHODS - Seeds

def read_seeds(path: str) -> np.ndarray:
    """Seed points (world mm), one per row."""
    try:
        seeds = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as ex:
        raise CorruptFileError("cannot read seeds from {}: {}".format(path, ex)) from ex
    if seeds.size == 0:
        return np.zeros((0, 3))
    if seeds.shape[1] != 3:
        raise CorruptFileError("{} must hold 3 coordinates per row".format(path))
    return seeds


def write_seeds(seeds, path: str) -> None:
    """Seed points (world mm), one per row with six decimals."""
    np.savetxt(path, np.asarray(seeds, dtype=np.float64).reshape(-1, 3), fmt='%.6f')


# METHODS - Checkpoints

def save_checkpoint(model: FenriModel, path: str) -> None:
    """Store configuration, float32 parameters and buffers with torch.save."""
    state = {}
    for name, tensor in model.state_dict().items():
        tensor = tensor.detach().cpu()
        state[name] = tensor.to(torch.float32).contiguous() if tensor.is_floating_point() \
            else tensor.contiguous()
    # Saving through a handle keeps the archive name independent of the file name
    with open(path, 'wb') as handle:
        torch.save({
            'format': CHECKPOINT_FORMAT,
            'version': CHECKPOINT_VERSION,
            'encoder': model.encoder_cfg.as_dict(),
            'decoder': model.decoder_cfg.as_dict(),
            'state': state,
        }, handle)
    _LOGGER.debug("Saved checkpoint to %s", path)


def load_checkpoint(path: str) -> FenriModel:
    """Rebuild a float32 model in inference mode from a checkpoint."""
    if not os.path.isfile(path):
        raise CorruptFileError("checkpoint {} does not exist".format(path))
    try:
        payload = torch.load(path, map_location='cpu', weights_only=True)
    except Exception as ex:
        raise CorruptFileError("cannot read checkpoint {}: {}".format(path, ex)) from ex
    if not isinstance(payload, dict) or payload.get('format') != CHECKPOINT_FORMAT:
        raise UnsupportedFormatError("{} is not a {} file".format(path, CHECKPOINT_FORMAT))
    if payload.get('version') != CHECKPOINT_VERSION:
        raise UnsupportedFormatError("{} has checkpoint version {}, expected {}".format(
            path, payload.get('version'), CHECKPOINT_VERSION))
    try:
        model = FenriModel(EncoderConfig.from_dict(payload['encoder']),
                           DecoderConfig.from_dict(payload['decoder']))
        model.load_state_dict(payload['state'], strict=True)
    except (KeyError, TypeError, RuntimeError, InvalidArgumentError) as ex:
        raise CorruptFileError("checkpoint {} is inconsistent: {}".format(path, ex)) from ex
    return model.eval()
