"""
Real even-degree spherical harmonics: basis, ODF evaluation and peak extraction.

Basis convention, for even ``l`` and ``-l <= m <= l``, with associated Legendre
functions ``P`` taken *without* the Condon-Shortley phase::

    m < 0:  Y(l,m) = sqrt(2) * N(l,|m|) * P(l,|m|)(cos theta) * sin(|m| phi)
    m = 0:  Y(l,0) =           N(l,0)   * P(l,0)(cos theta)
    m > 0:  Y(l,m) = sqrt(2) * N(l,m)   * P(l,m)(cos theta)   * cos(m phi)

    N(l,m) = sqrt((2l + 1) / (4 pi) * (l - m)! / (l + m)!)

Coefficients are ordered by ascending degree, then ascending order, which for
``lmax = 8`` gives 45 coefficients.
"""

import functools
import logging
import math
from typing import Iterator, Optional, Tuple, Union

import numpy as np
from dipy.data import get_sphere
from scipy.spatial import ConvexHull
from scipy.special import gammaln, lpmv

from fenri.const import (
    PEAK_MIN_AMPLITUDE, PEAK_REFINE_ITERATIONS, PEAK_REFINE_TOLERANCE,
    PEAK_SEPARATION_DEG, SH_LMAX)
from fenri.exceptions import InvalidArgumentError

_LOGGER = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)

# Sphere vertex sets shipped with dipy
SPHERE_PEAK_SEEDS = 'symmetric362'
SPHERE_DENSITY = 'symmetric724'

# Finite-difference step (radians) for the tangential gradient
GRADIENT_STEP = 1e-5

# Largest rotation (radians) a single ascent iteration may take
MAX_ASCENT_ANGLE = 0.25


class DirectionSet(object):
    """Immutable set of unit 3-vectors."""

    def __init__(self, directions, antipodal_symmetric: bool = False):
        xyz = np.array(directions, dtype=np.float64).reshape(-1, 3)
        if xyz.shape[0] == 0:
            raise InvalidArgumentError("direction set is empty")
        norms = np.linalg.norm(xyz, axis=1)
        if not np.all(np.isfinite(norms)) or np.any(norms == 0):
            raise InvalidArgumentError("directions must be finite and non-zero")
        xyz /= norms[:, None]
        xyz.flags.writeable = False
        self._directions = xyz
        self._antipodal_symmetric = bool(antipodal_symmetric)

    @property
    def directions(self) -> np.ndarray:
        """Unit vectors, one per row."""
        return self._directions

    @property
    def antipodal_symmetric(self) -> bool:
        """True if the set is meant to be read modulo the antipodal map."""
        return self._antipodal_symmetric

    def __len__(self):
        return self._directions.shape[0]

    def __repr__(self):
        return "<{}: n={}, antipodal_symmetric={}>".format(
            self.__class__.__name__,
            len(self),
            self._antipodal_symmetric,
        )


class PeakSet(object):
    """ODF peaks sorted by descending amplitude."""

    def __init__(self, directions=(), amplitudes=()):
        xyz = np.array(directions, dtype=np.float64).reshape(-1, 3)
        amps = np.array(amplitudes, dtype=np.float64).reshape(-1)
        if xyz.shape[0] != amps.shape[0]:
            raise InvalidArgumentError("peak directions and amplitudes differ in count")
        order = np.argsort(-amps, kind='stable')
        self._directions = xyz[order]
        self._amplitudes = amps[order]
        self._directions.flags.writeable = False
        self._amplitudes.flags.writeable = False

    @property
    def directions(self) -> np.ndarray:
        """Peak directions, one per row."""
        return self._directions

    @property
    def amplitudes(self) -> np.ndarray:
        """ODF value at each peak."""
        return self._amplitudes

    def __len__(self):
        return self._amplitudes.shape[0]

    def __iter__(self) -> Iterator[Tuple[np.ndarray, float]]:
        for direction, amplitude in zip(self._directions, self._amplitudes):
            yield direction, float(amplitude)

    def __repr__(self):
        return "<{}: n={}, amplitudes={}>".format(
            self.__class__.__name__,
            len(self),
            np.round(self._amplitudes, 4).tolist(),
        )


class SphereMesh(object):
    """Antipodally closed vertex set with neighbour lists, used to seed peak search."""

    def __init__(self, directions: Union[DirectionSet, np.ndarray]):
        xyz = _as_unit_vectors(directions)

        # Close the set under the antipodal map, dropping duplicates
        reps = np.unique(np.round(canonicalize(xyz), 12), axis=0)
        reps /= np.linalg.norm(reps, axis=1)[:, None]
        vertices = np.vstack([reps, -reps])
        if vertices.shape[0] < 12:
            raise InvalidArgumentError("too few seed directions to cover the sphere")

        hull = ConvexHull(vertices)
        neighbours = [set() for _ in range(vertices.shape[0])]
        for a, b, c in hull.simplices:
            neighbours[a].update((b, c))
            neighbours[b].update((a, c))
            neighbours[c].update((a, b))
        width = max(len(n) for n in neighbours)
        table = np.empty((vertices.shape[0], width), dtype=np.intp)
        for index, items in enumerate(neighbours):
            items = sorted(items)
            table[index] = items + [items[0]] * (width - len(items))

        self._vertices = vertices
        self._neighbours = table
        self._hemisphere = np.arange(reps.shape[0])
        for array in (self._vertices, self._neighbours, self._hemisphere):
            array.flags.writeable = False

    @property
    def vertices(self) -> np.ndarray:
        """All vertices; the first half are the hemisphere representatives."""
        return self._vertices

    @property
    def neighbours(self) -> np.ndarray:
        """Vertex adjacency, padded by repeating a neighbour."""
        return self._neighbours

    @property
    def hemisphere(self) -> np.ndarray:
        """Indices of the hemisphere representatives."""
        return self._hemisphere

    def __len__(self):
        return self._vertices.shape[0]

    def __repr__(self):
        return "<{}: vertices={}>".format(self.__class__.__name__, len(self))


#
# Basis
#

def n_coeffs(lmax: int = SH_LMAX) -> int:
    """Number of even-degree coefficients up to ``lmax``."""
    _check_lmax(lmax)
    return (lmax + 1) * (lmax + 2) // 2


def lmax_for(count: int) -> int:
    """Inverse of :func:`n_coeffs`."""
    for lmax in range(0, SH_LMAX + 1, 2):
        if n_coeffs(lmax) == count:
            return lmax
    raise InvalidArgumentError(
        "{} is not a valid even-degree coefficient count".format(count))


@functools.lru_cache(maxsize=None)
def sh_order_indices(lmax: int = SH_LMAX) -> Tuple[np.ndarray, np.ndarray]:
    """Degree and order of every coefficient, in storage order."""
    _check_lmax(lmax)
    degrees = []
    orders = []
    for degree in range(0, lmax + 1, 2):
        for order in range(-degree, degree + 1):
            degrees.append(degree)
            orders.append(order)
    degrees = np.array(degrees)
    orders = np.array(orders)
    degrees.flags.writeable = False
    orders.flags.writeable = False
    return degrees, orders


def sh_basis_matrix(dirs: Union[DirectionSet, np.ndarray], lmax: int = SH_LMAX) -> np.ndarray:
    """Basis functions evaluated at each direction, shape (n_dirs, n_coeffs)."""
    _check_lmax(lmax)
    return _basis(_as_unit_vectors(dirs), lmax)


def evaluate_odf(coeffs, dirs: Union[DirectionSet, np.ndarray]) -> np.ndarray:
    """
    Evaluate one or many SH series on a direction set.

    ``coeffs`` may be a single coefficient vector or any stack of them; the
    result has the leading shape of ``coeffs`` and one trailing entry per
    direction. Values are the raw series and may be negative.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    basis = sh_basis_matrix(dirs, lmax_for(coeffs.shape[-1]))
    return coeffs @ basis.T


def project_function_to_sh(values, dirs: Union[DirectionSet, np.ndarray],
                           weights=None, lmax: int = SH_LMAX) -> np.ndarray:
    """
    Fit SH coefficients to function values sampled on ``dirs``.

    Without weights this is an ordinary least-squares fit; with quadrature
    weights it is the weighted fit, which equals quadrature projection when
    the rule integrates the basis products exactly.
    """
    basis = sh_basis_matrix(dirs, lmax)
    n_dirs, count = basis.shape
    if n_dirs < 2 * count:
        raise InvalidArgumentError(
            "{} directions cannot determine {} coefficients".format(n_dirs, count))

    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != n_dirs:
        raise InvalidArgumentError("one value per direction is required")
    rhs = values.reshape(-1, n_dirs).T
    if weights is not None:
        root = np.sqrt(np.asarray(weights, dtype=np.float64).reshape(-1))
        if root.shape[0] != n_dirs:
            raise InvalidArgumentError("one weight per direction is required")
        basis = basis * root[:, None]
        rhs = rhs * root[:, None]

    solution, _, rank, _ = np.linalg.lstsq(basis, rhs, rcond=None)
    if rank < count:
        raise InvalidArgumentError("direction set is degenerate for lmax={}".format(lmax))
    return solution.T.reshape(values.shape[:-1] + (count,))


#
# Direction sets
#

@functools.lru_cache(maxsize=None)
def standard_sphere(name: str) -> DirectionSet:
    """One of dipy's bundled vertex sets, e.g. ``symmetric362``."""
    return DirectionSet(get_sphere(name=name).vertices, antipodal_symmetric=True)


@functools.lru_cache(maxsize=None)
def default_seed_mesh() -> SphereMesh:
    """The 362-vertex sphere used to seed peak search."""
    return SphereMesh(standard_sphere(SPHERE_PEAK_SEEDS))


@functools.lru_cache(maxsize=None)
def sphere_quadrature(n_theta: int = 32) -> Tuple[DirectionSet, np.ndarray]:
    """
    Gauss-Legendre (in cos theta) by uniform-azimuth product rule.

    Integrates spherical polynomials of degree below ``2 * n_theta`` exactly;
    the weights sum to 4 pi.
    """
    nodes, node_weights = np.polynomial.legendre.leggauss(n_theta)
    n_phi = 2 * n_theta
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    sin_theta = np.sqrt(1.0 - nodes ** 2)
    xyz = np.stack([
        np.outer(sin_theta, np.cos(phi)),
        np.outer(sin_theta, np.sin(phi)),
        np.outer(nodes, np.ones(n_phi)),
    ], axis=-1).reshape(-1, 3)
    weights = np.repeat(node_weights, n_phi) * (2.0 * np.pi / n_phi)
    weights.flags.writeable = False
    return DirectionSet(xyz), weights


def canonicalize(xyz: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Flip vectors onto the hemisphere z > 0 (ties broken on y, then x)."""
    xyz = np.array(xyz, dtype=np.float64).reshape(-1, 3)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    keep = (z > eps) | ((np.abs(z) <= eps) & ((y > eps) | ((np.abs(y) <= eps) & (x > 0))))
    xyz[~keep] *= -1.0
    return xyz


def axis_angle(a, b) -> np.ndarray:
    """Angle (radians, in [0, pi/2]) between axes, identifying antipodes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cosine = np.abs(np.sum(a * b, axis=-1))
    cosine /= np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    return np.arccos(np.clip(cosine, 0.0, 1.0))


#
# Peaks
#

def tangential_gradient(coeffs: np.ndarray, xyz: np.ndarray,
                        step: float = GRADIENT_STEP) -> np.ndarray:
    """Row-wise gradient of the ODF along the sphere, by central differences."""
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
    first, second = _tangent_frames(xyz)
    cos_step, sin_step = math.cos(step), math.sin(step)
    probes = np.concatenate([
        xyz * cos_step + first * sin_step,
        xyz * cos_step - first * sin_step,
        xyz * cos_step + second * sin_step,
        xyz * cos_step - second * sin_step,
    ])
    values = _row_amplitudes(np.tile(coeffs, (4, 1)), probes).reshape(4, -1)
    along_first = (values[0] - values[1]) / (2.0 * step)
    along_second = (values[2] - values[3]) / (2.0 * step)
    return along_first[:, None] * first + along_second[:, None] * second


def refine_peaks(coeffs, init, max_iter: int = PEAK_REFINE_ITERATIONS,
                 tol: float = PEAK_REFINE_TOLERANCE) -> Tuple[np.ndarray, np.ndarray]:
    """
    Projected gradient ascent on the sphere, one independent problem per row.

    Each row of ``coeffs`` is climbed from the matching row of ``init`` until
    the tangential gradient falls below ``tol`` or ``max_iter`` iterations
    pass. Only improving steps are taken, so the returned amplitude is never
    below the starting one.
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    xyz = np.atleast_2d(np.array(init, dtype=np.float64))
    if coeffs.shape[0] != xyz.shape[0]:
        raise InvalidArgumentError("one starting direction per coefficient row is required")
    norms = np.linalg.norm(xyz, axis=1)
    if np.any(norms == 0):
        raise InvalidArgumentError("starting directions must be non-zero")
    xyz /= norms[:, None]

    amplitude = _row_amplitudes(coeffs, xyz)
    rate = 0.05 / np.maximum(np.abs(amplitude), 1e-12)
    active = np.ones(xyz.shape[0], dtype=bool)

    for _ in range(max_iter):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        grad = tangential_gradient(coeffs[rows], xyz[rows])
        grad_norm = np.linalg.norm(grad, axis=1)
        done = grad_norm < tol
        active[rows[done]] = False
        rows, grad, grad_norm = rows[~done], grad[~done], grad_norm[~done]
        if rows.size == 0:
            break

        angle = np.minimum(rate[rows] * grad_norm, MAX_ASCENT_ANGLE)
        axis = grad / grad_norm[:, None]
        trial = xyz[rows] * np.cos(angle)[:, None] + axis * np.sin(angle)[:, None]
        trial /= np.linalg.norm(trial, axis=1)[:, None]
        trial_amplitude = _row_amplitudes(coeffs[rows], trial)

        better = trial_amplitude > amplitude[rows]
        moved = rows[better]
        xyz[moved] = trial[better]
        amplitude[moved] = trial_amplitude[better]
        rate[moved] *= 1.5
        rate[rows[~better]] *= 0.5

    return xyz, amplitude


def refine_peak(coeffs, init) -> Tuple[np.ndarray, float]:
    """Single-direction form of :func:`refine_peaks`."""
    xyz, amplitude = refine_peaks(np.asarray(coeffs)[None, :], np.asarray(init)[None, :])
    return xyz[0], float(amplitude[0])


def find_peaks_batch(coeffs, mesh: Optional[SphereMesh] = None,
                     min_amplitude: float = PEAK_MIN_AMPLITUDE,
                     max_peaks: int = 3, chunk: int = 4096) -> list:
    """
    :func:`find_peaks` for a stack of coefficient vectors.

    Discrete strict local maxima on the mesh hemisphere are refined by
    gradient ascent, then merged within the separation radius, thresholded
    and truncated per row.
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    mesh = mesh or default_seed_mesh()
    basis = _basis(mesh.vertices, lmax_for(coeffs.shape[1]))
    hemisphere = np.zeros(len(mesh), dtype=bool)
    hemisphere[mesh.hemisphere] = True
    floor = 0.5 * min_amplitude

    rows = []
    cols = []
    for start in range(0, coeffs.shape[0], chunk):
        amps = coeffs[start:start + chunk] @ basis.T
        neighbour_max = amps[:, mesh.neighbours].max(axis=2)
        is_peak = (amps > neighbour_max) & (amps >= floor) & hemisphere[None, :]
        chunk_rows, chunk_cols = np.nonzero(is_peak)
        rows.append(chunk_rows + start)
        cols.append(chunk_cols)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)

    results = [PeakSet() for _ in range(coeffs.shape[0])]
    if rows.size == 0:
        return results

    xyz, amplitude = refine_peaks(coeffs[rows], mesh.vertices[cols])
    xyz = canonicalize(xyz)
    min_cos = math.cos(math.radians(PEAK_SEPARATION_DEG))
    bounds = np.flatnonzero(np.diff(rows)) + 1
    for group in np.split(np.arange(rows.size), bounds):
        order = group[np.argsort(-amplitude[group], kind='stable')]
        kept = []
        for index in order:
            if amplitude[index] < min_amplitude or len(kept) >= max_peaks:
                break
            if all(abs(float(xyz[index] @ xyz[other])) < min_cos for other in kept):
                kept.append(index)
        results[rows[group[0]]] = PeakSet(xyz[kept], amplitude[kept])
    return results


def find_peaks(coeffs, seed_dirs: Optional[DirectionSet] = None,
               min_amplitude: float = PEAK_MIN_AMPLITUDE,
               max_peaks: int = 3) -> PeakSet:
    """Peaks of a single ODF; directions are hemisphere representatives."""
    mesh = SphereMesh(seed_dirs) if seed_dirs is not None else None
    return find_peaks_batch(np.asarray(coeffs)[None, :], mesh, min_amplitude, max_peaks)[0]


#
# Internals
#

def _check_lmax(lmax: int) -> None:
    if int(lmax) != lmax or lmax < 0 or lmax > SH_LMAX or lmax % 2:
        raise InvalidArgumentError(
            "lmax must be an even integer between 0 and {}, got {}".format(SH_LMAX, lmax))


def _as_unit_vectors(dirs) -> np.ndarray:
    if isinstance(dirs, DirectionSet):
        return dirs.directions
    return DirectionSet(dirs).directions


@functools.lru_cache(maxsize=None)
def _normalisation(lmax: int) -> np.ndarray:
    degrees, orders = sh_order_indices(lmax)
    table = np.empty(degrees.size)
    for col, (degree, order) in enumerate(zip(degrees, orders)):
        k = abs(int(order))
        table[col] = math.sqrt(
            (2 * degree + 1) / (4 * math.pi)
            * math.exp(gammaln(degree - k + 1) - gammaln(degree + k + 1)))
        if order != 0:
            table[col] *= SQRT2
    table.flags.writeable = False
    return table


def _basis(xyz: np.ndarray, lmax: int) -> np.ndarray:
    cos_theta = np.clip(xyz[:, 2], -1.0, 1.0)
    phi = np.arctan2(xyz[:, 1], xyz[:, 0])
    degrees, orders = sh_order_indices(lmax)
    norms = _normalisation(lmax)
    out = np.empty((xyz.shape[0], degrees.size))
    for col, (degree, order) in enumerate(zip(degrees, orders)):
        k = abs(int(order))
        legendre = (-1.0) ** k * lpmv(k, degree, cos_theta)
        if order < 0:
            out[:, col] = norms[col] * legendre * np.sin(k * phi)
        elif order == 0:
            out[:, col] = norms[col] * legendre
        else:
            out[:, col] = norms[col] * legendre * np.cos(k * phi)
    return out


def _row_amplitudes(coeffs: np.ndarray, xyz: np.ndarray) -> np.ndarray:
    basis = _basis(xyz, lmax_for(coeffs.shape[1]))
    return np.einsum('ij,ij->i', basis, coeffs)


def _tangent_frames(xyz: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.zeros_like(xyz)
    use_x = np.abs(xyz[:, 0]) < 0.9
    helper[use_x, 0] = 1.0
    helper[~use_x, 1] = 1.0
    first = np.cross(xyz, helper)
    first /= np.linalg.norm(first, axis=1)[:, None]
    second = np.cross(xyz, first)
    return first, second
