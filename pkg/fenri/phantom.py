"""
Synthetic fiber-bundle phantoms.

A phantom is a set of tubular bundles, each following a cubic centerline,
inside an isotropic background. It yields exact ground-truth fODFs (a
Watson-type density along the local bundle tangent), multi-tensor DWIs,
and ground-truth streamlines. The degradation pipeline reproduces a
clinical acquisition: angular subset, coarser voxels and Rician noise.
"""

import logging
import math
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from dipy.core.sphere import HemiSphere, disperse_charges
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from fenri.const import (
    DIFFUSIVITY_AXIAL, DIFFUSIVITY_ISOTROPIC, DIFFUSIVITY_RADIAL, SH_LMAX, WATSON_KAPPA)
from fenri.enums import FractionProfile
from fenri.exceptions import InvalidArgumentError, OutOfDomainError
from fenri.shcore import (
    n_coeffs, project_function_to_sh, sh_basis_matrix, sh_order_indices, sphere_quadrature)
from fenri.tracking import Streamline, StreamlineSet
from fenri.volume import ChannelVolume, VolumeGrid, block_downsample

_LOGGER = logging.getLogger(__name__)

# Spacing (mm) of the dense centerline table used for nearest-point lookups
CENTERLINE_SPACING = 0.02

# Arc-length spacing (mm) of ground-truth streamlines
STREAMLINE_SPACING = 0.5

# Iterations of charge dispersion when building gradient directions
DISPERSION_ITERATIONS = 5000

# Tolerance on summed bundle fractions
FRACTION_TOLERANCE = 1e-9


class AcquisitionScheme(object):
    """b-values and unit gradient directions, one per DWI channel."""

    def __init__(self, bvalues, gradients):
        bvalues = np.array(bvalues, dtype=np.float64).reshape(-1)
        gradients = np.array(gradients, dtype=np.float64).reshape(-1, 3)
        if bvalues.shape[0] != gradients.shape[0]:
            raise InvalidArgumentError("{} b-values but {} gradients".format(
                bvalues.shape[0], gradients.shape[0]))
        if bvalues.size == 0:
            raise InvalidArgumentError("scheme has no volumes")
        if np.any(bvalues < 0) or not np.all(np.isfinite(bvalues)):
            raise InvalidArgumentError("b-values must be finite and non-negative")
        norms = np.linalg.norm(gradients, axis=1)
        weighted = bvalues > 0
        if np.any(np.abs(norms[weighted] - 1.0) > 1e-6):
            raise InvalidArgumentError("diffusion-weighted gradients must be unit vectors")
        gradients[~weighted] = 0.0
        bvalues.flags.writeable = False
        gradients.flags.writeable = False
        self._bvalues = bvalues
        self._gradients = gradients

    @property
    def bvalues(self) -> np.ndarray:
        """b-value of each volume (s/mm^2)."""
        return self._bvalues

    @property
    def gradients(self) -> np.ndarray:
        """Unit gradient direction of each volume; zero for b0."""
        return self._gradients

    @property
    def b0_mask(self) -> np.ndarray:
        """True for unweighted volumes."""
        return self._bvalues == 0

    @property
    def shells(self) -> np.ndarray:
        """Distinct nonzero b-values, ascending."""
        return np.unique(self._bvalues[self._bvalues > 0])

    def select(self, indices) -> 'AcquisitionScheme':
        """Scheme restricted to the given volumes."""
        indices = np.asarray(indices, dtype=np.intp)
        return AcquisitionScheme(self._bvalues[indices], self._gradients[indices])

    def __len__(self):
        return self._bvalues.size

    def __repr__(self):
        return "<{}: b0={}, shells={}>".format(
            self.__class__.__name__,
            int(self.b0_mask.sum()),
            {int(b): int(np.sum(self._bvalues == b)) for b in self.shells},
        )


class BundleSpec(object):
    """Tubular bundle around a cubic centerline through control points."""

    def __init__(self, centerline, radius: float, kappa: float = WATSON_KAPPA,
                 fraction: float = 0.5, profile: FractionProfile = FractionProfile.Flat,
                 axial: float = DIFFUSIVITY_AXIAL, radial: float = DIFFUSIVITY_RADIAL,
                 name: str = 'bundle'):
        points = np.array(centerline, dtype=np.float64).reshape(-1, 3)
        if points.shape[0] < 2:
            raise InvalidArgumentError("a centerline needs at least 2 control points")
        steps = np.linalg.norm(np.diff(points, axis=0), axis=1)
        if np.any(steps <= 0):
            raise InvalidArgumentError("consecutive control points must differ")
        if not radius > 0:
            raise InvalidArgumentError("radius must be positive")
        if not kappa > 0:
            raise InvalidArgumentError("kappa must be positive")
        if not 0 < fraction <= 1:
            raise InvalidArgumentError("fraction must lie in (0,1]")
        if not axial > radial > 0:
            raise InvalidArgumentError("diffusivities need axial > radial > 0")

        self._name = name
        self._control = points
        self._radius = float(radius)
        self._kappa = float(kappa)
        self._fraction = float(fraction)
        self._profile = FractionProfile(profile)
        self._axial = float(axial)
        self._radial = float(radial)

        knots = np.concatenate([[0.0], np.cumsum(steps)])
        self._spline = CubicSpline(knots, points, bc_type='natural')
        coarse = self._spline(np.linspace(0.0, knots[-1], 1000))
        approx = np.sum(np.linalg.norm(np.diff(coarse, axis=0), axis=1))
        count = max(200, int(math.ceil(approx / CENTERLINE_SPACING)) + 1)
        self._params = np.linspace(0.0, knots[-1], count)
        self._dense = self._spline(self._params)
        tangents = self._spline(self._params, 1)
        self._tangents = tangents / np.linalg.norm(tangents, axis=1, keepdims=True)
        self._arc = np.concatenate([[0.0], np.cumsum(
            np.linalg.norm(np.diff(self._dense, axis=0), axis=1))])
        self._tree = cKDTree(self._dense)

    @property
    def name(self) -> str:
        """Bundle name used for masks, seeds and reports."""
        return self._name

    @property
    def control_points(self) -> np.ndarray:
        """Centerline control points (world mm)."""
        return self._control

    @property
    def radius(self) -> float:
        """Tube radius (mm)."""
        return self._radius

    @property
    def kappa(self) -> float:
        """Watson concentration of the fiber density."""
        return self._kappa

    @property
    def fraction(self) -> float:
        """Peak volume fraction."""
        return self._fraction

    @property
    def profile(self) -> FractionProfile:
        """Radial falloff of the volume fraction."""
        return self._profile

    @property
    def axial(self) -> float:
        """Diffusivity along the fibers (mm^2/s)."""
        return self._axial

    @property
    def radial(self) -> float:
        """Diffusivity across the fibers (mm^2/s)."""
        return self._radial

    @property
    def length(self) -> float:
        """Arc length of the centerline (mm)."""
        return float(self._arc[-1])

    @property
    def dense_centerline(self) -> np.ndarray:
        """Centerline sampled every CENTERLINE_SPACING mm or finer."""
        return self._dense

    @property
    def dense_tangents(self) -> np.ndarray:
        """Unit tangents matching :attr:`dense_centerline`."""
        return self._tangents

    @property
    def dense_arc(self) -> np.ndarray:
        """Arc length at each dense centerline sample."""
        return self._arc

    def locate(self, points) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Distance to the centerline, local tangent and an inside flag per point.

        Points projecting beyond either end of the centerline are outside.
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        distance, nearest = self._tree.query(points)
        tangents = self._tangents[nearest]
        inside = distance < self._radius
        first = nearest == 0
        last = nearest == self._dense.shape[0] - 1
        inside &= ~(first & (np.einsum('ij,j->i', points - self._dense[0], self._tangents[0]) < 0))
        inside &= ~(last & (np.einsum('ij,j->i', points - self._dense[-1], self._tangents[-1]) > 0))
        return distance, tangents, inside

    def fractions(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """Volume fraction and fiber tangent at each point."""
        distance, tangents, inside = self.locate(points)
        if self._profile is FractionProfile.Cosine:
            weight = 0.5 * (1.0 + np.cos(np.pi * np.minimum(distance / self._radius, 1.0)))
        else:
            weight = np.ones_like(distance)
        return np.where(inside, self._fraction * weight, 0.0), tangents

    def jittered(self, jitter: float, rng: np.random.Generator) -> 'BundleSpec':
        """Copy with every control point moved by up to ``jitter`` mm per axis."""
        moved = self._control + rng.uniform(-jitter, jitter, self._control.shape)
        return BundleSpec(moved, self._radius, self._kappa, self._fraction, self._profile,
                          self._axial, self._radial, self._name)

    def as_dict(self) -> dict:
        return {
            'name': self._name,
            'points': self._control.tolist(),
            'radius': self._radius,
            'kappa': self._kappa,
            'fraction': self._fraction,
            'profile': str(self._profile),
            'axial': self._axial,
            'radial': self._radial,
        }

    @classmethod
    def from_dict(cls, values: dict) -> 'BundleSpec':
        return cls(values['points'], values['radius'],
                   kappa=values.get('kappa', WATSON_KAPPA),
                   fraction=values.get('fraction', 0.5),
                   profile=FractionProfile(values.get('profile', 'flat')),
                   axial=values.get('axial', DIFFUSIVITY_AXIAL),
                   radial=values.get('radial', DIFFUSIVITY_RADIAL),
                   name=values.get('name', 'bundle'))

    def __repr__(self):
        return "<{}: name={}, control_points={}, radius={}, kappa={}, fraction={}>".format(
            self.__class__.__name__,
            self._name,
            self._control.shape[0],
            self._radius,
            self._kappa,
            self._fraction,
        )


class Phantom(object):
    """Bundles in an isotropic background, sampled on a grid."""

    def __init__(self, grid: VolumeGrid, bundles: Sequence[BundleSpec],
                 background_diffusivity: float = DIFFUSIVITY_ISOTROPIC, s0: float = 1.0,
                 background_odf_weight: float = 0.0):
        if not background_diffusivity > 0:
            raise InvalidArgumentError("background diffusivity must be positive")
        if not s0 > 0:
            raise InvalidArgumentError("S0 must be positive")
        if not background_odf_weight >= 0:
            raise InvalidArgumentError("background ODF weight must not be negative")
        names = [bundle.name for bundle in bundles]
        if len(set(names)) != len(names):
            raise InvalidArgumentError("bundle names must be unique")
        self._grid = grid
        self._bundles = list(bundles)
        self._background_diffusivity = float(background_diffusivity)
        self._s0 = float(s0)
        self._background_odf_weight = float(background_odf_weight)

    @property
    def grid(self) -> VolumeGrid:
        """Sampling grid."""
        return self._grid

    @property
    def bundles(self) -> List[BundleSpec]:
        """Fiber bundles."""
        return self._bundles

    @property
    def background_diffusivity(self) -> float:
        """Diffusivity of the isotropic compartment (mm^2/s)."""
        return self._background_diffusivity

    @property
    def s0(self) -> float:
        """Unweighted signal."""
        return self._s0

    @property
    def background_odf_weight(self) -> float:
        """Share of the background fraction drawn into the fODF as an isotropic term."""
        return self._background_odf_weight

    def bundle(self, name: str) -> BundleSpec:
        """Bundle by name."""
        for bundle in self._bundles:
            if bundle.name == name:
                return bundle
        raise InvalidArgumentError("no bundle named '{}'".format(name))

    def compartments(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """Per-bundle fractions (n, k) and tangents (n, k, 3) at world points."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        fractions = np.zeros((points.shape[0], len(self._bundles)))
        tangents = np.zeros((points.shape[0], len(self._bundles), 3))
        for index, bundle in enumerate(self._bundles):
            fractions[:, index], tangents[:, index] = bundle.fractions(points)
        return fractions, tangents

    def bundle_mask(self, name: str) -> ChannelVolume:
        """Binary mask of the voxels whose center lies inside a bundle."""
        fraction, _ = self.bundle(name).fractions(self._grid.voxel_centers())
        return ChannelVolume(self._grid, (fraction > 0).astype(np.float32).reshape(self._grid.shape))

    def as_dict(self) -> dict:
        return {
            'shape': list(self._grid.shape),
            'voxel_size': self._grid.voxel_size.tolist(),
            'origin': self._grid.origin.tolist(),
            's0': self._s0,
            'background_diffusivity': self._background_diffusivity,
            'background_odf_weight': self._background_odf_weight,
            'bundles': [bundle.as_dict() for bundle in self._bundles],
        }

    @classmethod
    def from_dict(cls, values: dict) -> 'Phantom':
        grid = VolumeGrid(values['shape'], values['voxel_size'], values.get('origin', (0, 0, 0)))
        bundles = [BundleSpec.from_dict(item) for item in values.get('bundles', [])]
        return cls(grid, bundles,
                   background_diffusivity=values.get('background_diffusivity',
                                                     DIFFUSIVITY_ISOTROPIC),
                   s0=values.get('s0', 1.0),
                   background_odf_weight=values.get('background_odf_weight', 0.0))

    def __repr__(self):
        return "<{}: grid={}, bundles={}>".format(
            self.__class__.__name__,
            self._grid,
            [bundle.name for bundle in self._bundles],
        )


# METHODS - Acquisition schemes

def default_scheme(n_b0: int = 4, shells: Sequence[float] = (1000.0, 3000.0),
                   per_shell: int = 90, seed: int = 0) -> AcquisitionScheme:
    """b0 volumes followed by shells sharing one charge-dispersed direction set."""
    if n_b0 < 0 or per_shell < 1:
        raise InvalidArgumentError("scheme needs per_shell >= 1 and n_b0 >= 0")
    rng = np.random.default_rng(seed)
    start = rng.normal(size=(per_shell, 3))
    start /= np.linalg.norm(start, axis=1, keepdims=True)
    if per_shell > 1:
        hemisphere, _ = disperse_charges(HemiSphere(xyz=start), DISPERSION_ITERATIONS)
        directions = hemisphere.vertices
    else:
        directions = np.array([[0.0, 0.0, 1.0]])
    bvalues = [0.0] * n_b0
    gradients = [np.zeros(3)] * n_b0
    for shell in shells:
        bvalues += [float(shell)] * per_shell
        gradients += list(directions)
    return AcquisitionScheme(bvalues, np.array(gradients))


def select_first(scheme: AcquisitionScheme, n_b0: int, per_shell: int) -> np.ndarray:
    """Indices of the first ``n_b0`` b0 volumes and first ``per_shell`` of every shell."""
    keep = list(np.flatnonzero(scheme.b0_mask)[:n_b0])
    for shell in scheme.shells:
        members = np.flatnonzero(scheme.bvalues == shell)
        if members.size < per_shell:
            _LOGGER.warning("Shell b=%g has %d volumes, fewer than the %d requested",
                            shell, members.size, per_shell)
        keep += list(members[:per_shell])
    return np.sort(np.array(keep, dtype=np.intp))


# METHODS - Ground truth

@lru_cache(maxsize=16)
def watson_zonal_coefficients(kappa: float, lmax: int = SH_LMAX) -> np.ndarray:
    """
    Zonal SH coefficients (one per even degree) of a unit-mass Watson density about z.
    """
    directions, weights = sphere_quadrature()
    cosines = directions.directions[:, 2]
    density = np.exp(kappa * (cosines ** 2 - 1.0))
    density /= np.sum(weights * density)
    coeffs = project_function_to_sh(density, directions, weights, lmax=lmax)
    degrees, orders = sh_order_indices(lmax)
    zonal = coeffs[orders == 0]
    zonal.flags.writeable = False
    return zonal


def rotated_kernel(kappa: float, tangents, lmax: int = SH_LMAX) -> np.ndarray:
    """SH coefficients of the Watson density aligned with each tangent, shape (n, count)."""
    degrees, _ = sh_order_indices(lmax)
    zonal = watson_zonal_coefficients(float(kappa), lmax)
    factor = zonal[degrees // 2] * np.sqrt(4.0 * np.pi / (2.0 * degrees + 1.0))
    return sh_basis_matrix(np.asarray(tangents, dtype=np.float64).reshape(-1, 3), lmax) * factor


def ground_truth_points(ph: Phantom, points) -> np.ndarray:
    """Ground-truth fODF coefficients at many world points."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    fractions, tangents = ph.compartments(points)
    out = np.zeros((points.shape[0], n_coeffs()))
    for index, bundle in enumerate(ph.bundles):
        present = fractions[:, index] > 0
        if np.any(present):
            out[present] += fractions[present, index, None] \
                * rotated_kernel(bundle.kappa, tangents[present, index])
    if ph.background_odf_weight > 0:
        background = np.clip(1.0 - fractions.sum(axis=1), 0.0, None)
        out[:, 0] += ph.background_odf_weight * background * 0.5 / math.sqrt(math.pi)
    return out


def ground_truth_fodf(ph: Phantom, q) -> np.ndarray:
    """Ground-truth fODF coefficients at one world point."""
    if not ph.grid.contains(q)[0]:
        raise OutOfDomainError("point {} is outside the phantom grid".format(
            np.asarray(q).tolist()))
    return ground_truth_points(ph, q)[0]


def ground_truth_volume(ph: Phantom) -> ChannelVolume:
    """Ground-truth fODF coefficients at every voxel center."""
    values = ground_truth_points(ph, ph.grid.voxel_centers())
    return ChannelVolume(ph.grid, values.reshape(ph.grid.shape + (values.shape[1],)))


# METHODS - Signal

def simulate_points(ph: Phantom, scheme: AcquisitionScheme, points) -> np.ndarray:
    """Multi-tensor signal at world points, shape (n, volumes)."""
    fractions, tangents = ph.compartments(points)
    total = fractions.sum(axis=1)
    if np.any(total > 1.0 + FRACTION_TOLERANCE):
        raise InvalidArgumentError("bundle fractions sum to {:.4f} > 1 somewhere".format(
            total.max()))
    bvalues = scheme.bvalues
    signal = (1.0 - np.minimum(total, 1.0))[:, None] \
        * np.exp(-bvalues * ph.background_diffusivity)[None, :]
    for index, bundle in enumerate(ph.bundles):
        cosines = tangents[:, index] @ scheme.gradients.T
        adc = bundle.radial + (bundle.axial - bundle.radial) * cosines ** 2
        signal += fractions[:, index, None] * np.exp(-bvalues[None, :] * adc)
    return ph.s0 * signal


def simulate_dwi(ph: Phantom, scheme: AcquisitionScheme) -> ChannelVolume:
    """DWIs at every voxel center of the phantom grid."""
    values = simulate_points(ph, scheme, ph.grid.voxel_centers())
    _LOGGER.debug("Simulated %d volumes on %s", len(scheme), ph.grid)
    return ChannelVolume(ph.grid, values.reshape(ph.grid.shape + (len(scheme),)))


def add_rician_noise(v: ChannelVolume, snr_db: float, seed: int,
                     scheme: Optional[AcquisitionScheme] = None) -> ChannelVolume:
    """
    Magnitude of the signal plus complex Gaussian noise.

    The noise level is set from the mean reference intensity over the
    foreground; the reference is the b0 channels of ``scheme``, or every
    channel without one.
    """
    if math.isnan(snr_db):
        raise InvalidArgumentError("SNR must not be NaN")
    if scheme is not None and len(scheme) != v.channels:
        raise InvalidArgumentError("scheme has {} volumes but data has {} channels".format(
            len(scheme), v.channels))
    if scheme is not None and np.any(scheme.b0_mask):
        reference = v.data[..., scheme.b0_mask].mean(axis=3)
    else:
        reference = v.data.mean(axis=3)
    foreground = reference > 0
    if not np.any(foreground):
        raise InvalidArgumentError("no foreground voxel to set the noise level from")
    if math.isinf(snr_db) and snr_db > 0:
        return ChannelVolume(v.grid, np.abs(v.data))

    s_ref = float(reference[foreground].mean())
    sigma = s_ref * 10.0 ** (-snr_db / 20.0)
    rng = np.random.Generator(np.random.Philox(seed))
    real = v.data + rng.normal(0.0, sigma, v.data.shape)
    imaginary = rng.normal(0.0, sigma, v.data.shape)
    _LOGGER.debug("Rician noise at %.1f dB: sigma %.5g (reference %.5g)", snr_db, sigma, s_ref)
    return ChannelVolume(v.grid, np.hypot(real, imaginary).astype(v.data.dtype))


def normalize_by_b0(v: ChannelVolume, scheme: AcquisitionScheme) -> ChannelVolume:
    """Divide every channel by the voxel's mean b0 intensity; 0 where that mean is 0."""
    if len(scheme) != v.channels:
        raise InvalidArgumentError("scheme and data disagree on channel count")
    if not np.any(scheme.b0_mask):
        raise InvalidArgumentError("scheme has no b0 volume")
    b0 = v.data[..., scheme.b0_mask].mean(axis=3, keepdims=True)
    safe = np.where(b0 > 0, b0, 1.0)
    return ChannelVolume(v.grid, np.where(b0 > 0, v.data / safe, 0.0).astype(v.data.dtype))


def degrade(v: ChannelVolume, scheme: AcquisitionScheme, target_voxel: Optional[float] = None,
            keep=None, snr_db: float = math.inf,
            seed: int = 0) -> Tuple[ChannelVolume, AcquisitionScheme]:
    """Channel subset, then box-window downsampling, then Rician noise."""
    if keep is not None:
        keep = np.asarray(keep, dtype=np.intp)
        if keep.size == 0 or keep.min() < 0 or keep.max() >= v.channels:
            raise InvalidArgumentError("channel subset out of range")
        v = v.select_channels(keep)
        scheme = scheme.select(keep)
    factor = 1.0 if target_voxel is None else float(target_voxel) / float(v.grid.voxel_size[0])
    v = block_downsample(v, factor)
    if not (math.isinf(snr_db) and snr_db > 0):
        v = add_rician_noise(v, snr_db, seed, scheme)
    _LOGGER.info("Degraded to %d channels on %s", v.channels, v.grid)
    return v, scheme


def phantom_variants(ph: Phantom, n: int, jitter: float, seed: int) -> List[Phantom]:
    """``n`` phantoms with independently jittered centerlines; variant 0 is ``ph`` itself."""
    if n < 1:
        raise InvalidArgumentError("need at least one variant")
    variants = [ph]
    rng = np.random.default_rng(seed)
    for _ in range(n - 1):
        variants.append(Phantom(ph.grid,
                                [bundle.jittered(jitter, rng) for bundle in ph.bundles],
                                ph.background_diffusivity, ph.s0, ph.background_odf_weight))
    return variants


# METHODS - Streamlines

def _transport_frames(tangents: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rotation-minimising normals and binormals along a dense tangent table."""
    first = tangents[0]
    helper = np.eye(3)[np.argmin(np.abs(first))]
    normal = np.cross(first, helper)
    normal /= np.linalg.norm(normal)
    normals = np.empty_like(tangents)
    for index, tangent in enumerate(tangents):
        normal = normal - np.dot(normal, tangent) * tangent
        normal /= np.linalg.norm(normal)
        normals[index] = normal
    return normals, np.cross(tangents, normals)


def _resample_by_arc(curve: np.ndarray, spacing: float) -> np.ndarray:
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(curve, axis=0), axis=1))])
    stations = np.arange(0.0, arc[-1], spacing)
    if arc[-1] - stations[-1] > 1e-9:
        stations = np.append(stations, arc[-1])
    return np.stack([np.interp(stations, arc, curve[:, axis]) for axis in range(3)], axis=1)


def ground_truth_streamlines(b: BundleSpec, n: int, seed: int,
                             spacing: float = STREAMLINE_SPACING) -> StreamlineSet:
    """
    ``n`` curves parallel to the centerline at uniform random offsets inside
    the tube, sampled every ``spacing`` mm; each seed index marks its midpoint.
    """
    if n < 1:
        raise InvalidArgumentError("need at least one streamline")
    rng = np.random.default_rng(seed)
    normals, binormals = _transport_frames(b.dense_tangents)
    radii = b.radius * np.sqrt(rng.random(n))
    angles = 2.0 * np.pi * rng.random(n)
    streamlines = []
    for radius, angle in zip(radii, angles):
        offset = radius * (np.cos(angle) * normals + np.sin(angle) * binormals)
        points = _resample_by_arc(b.dense_centerline + offset, spacing)
        streamlines.append(Streamline(points, seed_index=(points.shape[0] - 1) // 2))
    return StreamlineSet(streamlines)


def streamline_seeds(streamlines: StreamlineSet) -> np.ndarray:
    """Seed point of each streamline, shape (n, 3)."""
    if len(streamlines) == 0:
        return np.zeros((0, 3))
    return np.array([line.points[line.seed_index] for line in streamlines])
