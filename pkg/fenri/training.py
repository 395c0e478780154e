"""
Training loop, per-degree target statistics and the finite-difference
gradient check for :class:`fenri.field.FenriModel`.
"""

import copy
import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from fenri.exceptions import InvalidArgumentError, NumericFailureError
from fenri.field import FenriModel, volume_tensor, wmse
from fenri.shcore import lmax_for, sh_order_indices
from fenri.volume import ChannelVolume, VolumeGrid, trilinear_sample_many

_LOGGER = logging.getLogger(__name__)

# Central-difference step of gradient_check
GRADIENT_CHECK_STEP = 1e-5

# Smallest gradient magnitude gradient_check divides by
GRADIENT_CHECK_FLOOR = 1e-8

# Bound on the rounding error of a float64 loss, relative to its magnitude
GRADIENT_CHECK_RESOLUTION = 1e-10

# Relative disagreement of one-sided differences that marks a kink inside the step
GRADIENT_KINK_TOLERANCE = 1e-4

# Step reductions tried before a parameter is skipped as sitting on a kink
GRADIENT_KINK_RETRIES = 2

TrainingPair = Tuple[ChannelVolume, ChannelVolume]


class TrainConfig(object):
    """Optimisation schedule; a fixed seed makes runs repeatable."""

    def __init__(self, learning_rate: float = 1e-3, batch_queries: int = 2048,
                 epochs: int = 10, steps_per_epoch: int = 100, seed: int = 0,
                 patch_size: int = 16, betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0, log_interval: int = 50):
        if not learning_rate >= 0:
            raise InvalidArgumentError("learning_rate must not be negative")
        for name, value in (('batch_queries', batch_queries),
                            ('steps_per_epoch', steps_per_epoch),
                            ('patch_size', patch_size),
                            ('log_interval', log_interval)):
            if int(value) < 1:
                raise InvalidArgumentError("{} must be positive, got {}".format(name, value))
        if int(epochs) < 0:
            raise InvalidArgumentError("epochs must not be negative")
        if not (0 <= betas[0] < 1 and 0 <= betas[1] < 1):
            raise InvalidArgumentError("betas must lie in [0,1)")
        self._learning_rate = float(learning_rate)
        self._batch_queries = int(batch_queries)
        self._epochs = int(epochs)
        self._steps_per_epoch = int(steps_per_epoch)
        self._seed = int(seed)
        self._patch_size = int(patch_size)
        self._betas = (float(betas[0]), float(betas[1]))
        self._eps = float(eps)
        self._weight_decay = float(weight_decay)
        self._log_interval = int(log_interval)

    @property
    def learning_rate(self) -> float:
        """Adam step size."""
        return self._learning_rate

    @property
    def batch_queries(self) -> int:
        """Query points per optimisation step."""
        return self._batch_queries

    @property
    def epochs(self) -> int:
        """Number of epochs."""
        return self._epochs

    @property
    def steps_per_epoch(self) -> int:
        """Optimisation steps per epoch."""
        return self._steps_per_epoch

    @property
    def steps(self) -> int:
        """Total optimisation steps."""
        return self._epochs * self._steps_per_epoch

    @property
    def seed(self) -> int:
        """Seed for patch and query sampling."""
        return self._seed

    @property
    def patch_size(self) -> int:
        """Edge length (input voxels) of the cubic training patches."""
        return self._patch_size

    @property
    def betas(self) -> Tuple[float, float]:
        """Adam moment decay rates."""
        return self._betas

    @property
    def eps(self) -> float:
        """Adam denominator term."""
        return self._eps

    @property
    def weight_decay(self) -> float:
        """L2 penalty."""
        return self._weight_decay

    @property
    def log_interval(self) -> int:
        """Steps between progress messages."""
        return self._log_interval

    def __repr__(self):
        return "<{}: lr={}, steps={}x{}, batch_queries={}, patch_size={}, seed={}>".format(
            self.__class__.__name__,
            self._learning_rate,
            self._epochs,
            self._steps_per_epoch,
            self._batch_queries,
            self._patch_size,
            self._seed,
        )


class QueryBatch(object):
    """DWI input with query points and their target SH coefficients."""

    def __init__(self, dwi: ChannelVolume, points: np.ndarray, targets: np.ndarray):
        self._dwi = dwi
        self._points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self._targets = np.asarray(targets, dtype=np.float64)
        if self._targets.shape[0] != self._points.shape[0]:
            raise InvalidArgumentError("one target row is needed per query point")

    @property
    def dwi(self) -> ChannelVolume:
        """Encoder input."""
        return self._dwi

    @property
    def points(self) -> np.ndarray:
        """Query points (world mm)."""
        return self._points

    @property
    def targets(self) -> np.ndarray:
        """Raw SH coefficients at each point."""
        return self._targets

    def __len__(self):
        return self._points.shape[0]

    def __repr__(self):
        return "<{}: {} queries on {}>".format(
            self.__class__.__name__, len(self), self._dwi.grid)


def compute_degree_statistics(volumes: Sequence[ChannelVolume]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-degree mean and standard deviation of SH targets.

    Coefficients of every order of a degree are pooled over all voxels whose
    c0 is nonzero. A degree with no spread gets scale 1.
    """
    if not volumes:
        raise InvalidArgumentError("no target volumes given")
    lmax = lmax_for(volumes[0].channels)
    degrees, _ = sh_order_indices(lmax)
    rows = []
    for volume in volumes:
        if volume.channels != degrees.size:
            raise InvalidArgumentError("target volumes disagree on coefficient count")
        flat = volume.data.reshape(-1, volume.channels)
        rows.append(flat[flat[:, 0] != 0])
    pooled = np.concatenate(rows, axis=0).astype(np.float64)

    means = np.zeros(lmax // 2 + 1)
    scales = np.ones(lmax // 2 + 1)
    if pooled.shape[0] == 0:
        _LOGGER.warning("No voxel with nonzero c0; using unit degree scales")
        return means, scales
    for index, degree in enumerate(range(0, lmax + 1, 2)):
        values = pooled[:, degrees == degree]
        means[index] = values.mean()
        spread = values.std()
        if spread > 0 and np.isfinite(spread):
            scales[index] = spread
        else:
            _LOGGER.warning("Degree %d has no spread; using scale 1", degree)
    _LOGGER.debug("Degree means %s, scales %s", means, scales)
    return means, scales


def sample_patch(dwi: ChannelVolume, size: int, rng: np.random.Generator) -> ChannelVolume:
    """Random cubic sub-volume of at most ``size`` voxels per edge."""
    shape = np.array(dwi.grid.shape)
    extent = np.minimum(size, shape)
    corner = np.array([rng.integers(0, n + 1) for n in shape - extent])
    grid = VolumeGrid(extent, dwi.grid.voxel_size, dwi.grid.grid_to_world(corner))
    window = tuple(slice(c, c + e) for c, e in zip(corner, extent))
    return ChannelVolume(grid, dwi.data[window])


def sample_queries(patch: ChannelVolume, target: ChannelVolume, count: int,
                   rng: np.random.Generator) -> QueryBatch:
    """Uniform query points over the patch with trilinear target coefficients."""
    lower, upper = patch.grid.lower, patch.grid.upper
    points = lower + rng.random((count, 3)) * (upper - lower)
    targets = trilinear_sample_many(target, points, clamp=True)
    return QueryBatch(patch, points, targets)


def batch_loss(model: FenriModel, batch: QueryBatch) -> torch.Tensor:
    """WMSE of the model on a query batch; differentiable."""
    dtype = model.dtype
    latent = model(volume_tensor(batch.dwi, dtype)[None])[0]
    pred = model.query(latent, batch.dwi.grid, batch.points, standardized=True)
    target = model.standardize(torch.as_tensor(batch.targets, dtype=dtype))
    return ((pred - target) ** 2).mean()


def train(model: FenriModel, dataset: Sequence[TrainingPair], cfg: TrainConfig,
          callback: Optional[Callable[[int, float], None]] = None) -> Tuple[FenriModel, List[float]]:
    """
    Fit ``model`` to (DWI, ground-truth SH) pairs with Adam.

    Degree statistics must already be installed on the model. Each step
    draws one subject, one random patch and ``batch_queries`` uniform
    queries inside it. Returns the model and the per-step loss history.
    """
    if not dataset:
        raise InvalidArgumentError("training needs at least one subject")
    for dwi, target in dataset:
        if dwi.channels != model.encoder_cfg.in_channels:
            raise InvalidArgumentError("model expects {} DWI channels, got {}".format(
                model.encoder_cfg.in_channels, dwi.channels))
        if target.channels != model.decoder_cfg.out_dim:
            raise InvalidArgumentError("targets must carry {} coefficients".format(
                model.decoder_cfg.out_dim))

    model.set_world_normalizer(dataset[0][0].grid)
    rng = np.random.default_rng(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=cfg.betas,
                                 eps=cfg.eps, weight_decay=cfg.weight_decay)
    history = []
    _LOGGER.info("Training for %d steps on %d subject(s)", cfg.steps, len(dataset))
    model.train()
    for step in range(cfg.steps):
        dwi, target = dataset[int(rng.integers(len(dataset)))]
        patch = sample_patch(dwi, cfg.patch_size, rng)
        batch = sample_queries(patch, target, cfg.batch_queries, rng)

        optimizer.zero_grad()
        loss = batch_loss(model, batch)
        value = float(loss.detach())
        if not np.isfinite(value):
            raise NumericFailureError("loss became {} at step {}".format(value, step))
        loss.backward()
        optimizer.step()
        history.append(value)

        if (step + 1) % cfg.log_interval == 0 or step + 1 == cfg.steps:
            _LOGGER.info("Step %d/%d: wmse %.6f", step + 1, cfg.steps, value)
        if callback:
            callback(step, value)
    model.eval()
    return model, history


def _central_difference(replica: FenriModel, batch: QueryBatch, values: torch.Tensor,
                        index: int, base: float, step: float) -> Tuple[float, float, bool]:
    """
    Central difference along one parameter, shrinking the step around kinks.

    A ReLU switching inside the step shows up as disagreeing one-sided
    differences. The step is divided by 10 until they agree. Returns the
    difference, its rounding resolution and whether the step came out smooth.
    """
    original = values[index].item()
    for _ in range(GRADIENT_KINK_RETRIES + 1):
        values[index] = original + step
        plus = batch_loss(replica, batch).item()
        values[index] = original - step
        minus = batch_loss(replica, batch).item()
        values[index] = original

        forward = (plus - base) / step
        backward = (base - minus) / step
        numeric = 0.5 * (forward + backward)
        noise = GRADIENT_CHECK_RESOLUTION * max(abs(plus), abs(minus), 1.0) / step
        if abs(forward - backward) <= GRADIENT_KINK_TOLERANCE * max(abs(numeric), noise):
            return numeric, noise, True
        step *= 0.1
    return numeric, noise, False


def gradient_check(model: FenriModel, batch: QueryBatch, n_params: int = 200,
                   step: float = GRADIENT_CHECK_STEP, seed: int = 0,
                   decoder_only: bool = False) -> float:
    """
    Largest disagreement between autograd and central differences.

    Runs on a float64 copy in inference mode. Errors are relative to the
    larger gradient magnitude, or to the rounding resolution of the
    difference quotient when that is larger. Parameters whose step never
    clears a ReLU kink are skipped and counted in the log.
    """
    replica = copy.deepcopy(model).double().eval()
    params = list((replica.decoder if decoder_only else replica).parameters())
    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    replica.zero_grad()
    loss = batch_loss(replica, batch)
    loss.backward()
    base = loss.item()
    analytic = [p.grad.detach().reshape(-1).clone() for p in params]

    rng = np.random.default_rng(seed)
    picks = rng.choice(int(offsets[-1]), size=min(n_params, int(offsets[-1])), replace=False)
    worst = 0.0
    skipped = 0
    with torch.no_grad():
        for flat in picks:
            owner = int(np.searchsorted(offsets, flat, side='right') - 1)
            index = int(flat - offsets[owner])
            numeric, noise, smooth = _central_difference(
                replica, batch, params[owner].view(-1), index, base, step)
            if not smooth:
                skipped += 1
                continue

            exact = analytic[owner][index].item()
            scale = max(abs(exact), abs(numeric), noise, GRADIENT_CHECK_FLOOR)
            worst = max(worst, abs(exact - numeric) / scale)
    if skipped:
        _LOGGER.debug("Gradient check skipped %d parameter(s) sitting on a kink", skipped)
    _LOGGER.debug("Gradient check over %d parameters: max error %.3e", picks.size - skipped, worst)
    return worst


def evaluate_wmse(model: FenriModel, batch: QueryBatch) -> float:
    """WMSE of raw predictions against raw targets."""
    model.eval()
    with torch.no_grad():
        latent = model(volume_tensor(batch.dwi, model.dtype)[None])[0]
        pred = model.query(latent, batch.dwi.grid, batch.points)
    return float(wmse(pred.double(), torch.as_tensor(batch.targets), model.degree_scales.double()))
