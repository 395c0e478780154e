"""
Configuration settings.
"""

import logging
import math
import os
from typing import Any, Dict, List, Optional

import yaml

from fenri.enums import LoggerLevel
from fenri.exceptions import ConfigError, FenriError

_LOGGER = logging.getLogger(__name__)

CONF_B0 = 'b0'
CONF_BACKGROUND_DIFFUSIVITY = 'background_diffusivity'
CONF_BACKGROUND_ODF_WEIGHT = 'background_odf_weight'
CONF_BATCH_NORM = 'batch_norm'
CONF_BATCH_QUERIES = 'batch_queries'
CONF_BETA1 = 'beta1'
CONF_BETA2 = 'beta2'
CONF_BUNDLES = 'bundles'
CONF_CUTOFF = 'cutoff'
CONF_DEFAULT = 'default'
CONF_DIRECTIONS = 'directions'
CONF_EPOCHS = 'epochs'
CONF_FREQUENCIES = 'frequencies'
CONF_HIDDEN_LAYERS = 'hidden_layers'
CONF_HIDDEN_WIDTH = 'hidden_width'
CONF_JITTER = 'jitter'
CONF_KEEP_B0 = 'keep_b0'
CONF_KEEP_PER_SHELL = 'keep_per_shell'
CONF_KERNEL = 'kernel'
CONF_LATENT_CHANNELS = 'latent_channels'
CONF_LEARNING_RATE = 'learning_rate'
CONF_LOG_INTERVAL = 'log_interval'
CONF_MASK_THRESHOLD = 'mask_threshold'
CONF_MAX_ANGLE = 'max_angle'
CONF_MAX_LENGTH = 'max_length'
CONF_MAX_STEPS = 'max_steps'
CONF_MIN_LENGTH = 'min_length'
CONF_N_BLOCKS = 'n_blocks'
CONF_NAMESPACES = 'namespaces'
CONF_NORMALIZE_B0 = 'normalize_b0'
CONF_ORIGIN = 'origin'
CONF_OUTPUT = 'output'
CONF_PATCH_SIZE = 'patch_size'
CONF_POOL_KERNEL = 'pool_kernel'
CONF_S0 = 's0'
CONF_SEED = 'seed'
CONF_SHAPE = 'shape'
CONF_SHELLS = 'shells'
CONF_SNR_DB = 'snr_db'
CONF_STEP_SIZE = 'step_size'
CONF_STEPS_PER_EPOCH = 'steps_per_epoch'
CONF_STREAMLINES = 'streamlines'
CONF_SUBJECTS = 'subjects'
CONF_THREADS = 'threads'
CONF_UNITS_PER_BLOCK = 'units_per_block'
CONF_VOXEL_SIZE = 'voxel_size'
CONF_WEIGHT_DECAY = 'weight_decay'

GROUP_DEGRADE = 'degrade'
GROUP_LOGGER = 'logger'
GROUP_MODEL = 'model'
GROUP_PHANTOM = 'phantom'
GROUP_PREDICT = 'predict'
GROUP_RUN = 'run'
GROUP_SCHEME = 'scheme'
GROUP_SCORING = 'scoring'
GROUP_TRACKING = 'tracking'
GROUP_TRAINING = 'training'

GROUPS = (GROUP_RUN, GROUP_PHANTOM, GROUP_SCHEME, GROUP_DEGRADE, GROUP_MODEL,
          GROUP_TRAINING, GROUP_PREDICT, GROUP_TRACKING, GROUP_SCORING, GROUP_LOGGER)

DEFAULT_LOGGERLEVEL = LoggerLevel.Info

DEFAULT_CONFIG = """
# Settings shared by every command
""" + GROUP_RUN + """:

  # Seed for every random draw; identical seeds reproduce identical files
  """ + CONF_SEED + """: 0

  # Worker threads for torch and for tracking
  """ + CONF_THREADS + """: 1

  # Directory receiving all artefacts of this run
  """ + CONF_OUTPUT + """: fenri-run

# Synthetic phantom; coordinates are world mm, voxel (0,0,0) is centered on origin
""" + GROUP_PHANTOM + """:

  """ + CONF_SHAPE + """: [24, 24, 24]
  """ + CONF_VOXEL_SIZE + """: 1.25
  """ + CONF_ORIGIN + """: [0.0, 0.0, 0.0]
  """ + CONF_S0 + """: 1.0

  # Isotropic compartment filling what the bundles leave (mm^2/s)
  """ + CONF_BACKGROUND_DIFFUSIVITY + """: 3.0e-3

  # Share of the background drawn into the ground-truth fODF as an
  # isotropic term; 0 keeps the fODF mass equal to the bundle fractions
  """ + CONF_BACKGROUND_ODF_WEIGHT + """: 0.0

  # Number of subjects; subject 0 is the phantom below, the others have
  # every control point moved by up to 'jitter' mm per axis
  """ + CONF_SUBJECTS + """: 4
  """ + CONF_JITTER + """: 1.0

  # Ground-truth streamlines (and tracking seeds) per bundle
  """ + CONF_STREAMLINES + """: 200

  # Each bundle: name, centerline control points, radius (mm), Watson
  # concentration kappa, volume fraction, profile (flat or cosine) and
  # axial / radial diffusivities (mm^2/s)
  """ + CONF_BUNDLES + """:
    - name: straight
      points: [[-2.0, 14.375, 14.375], [31.0, 14.375, 14.375]]
      radius: 4.0
      kappa: 20.0
      fraction: 0.5
      profile: flat
      axial: 1.7e-3
      radial: 0.2e-3
    - name: arc
      points: [[19.601, -3.973, 14.375], [19.979, 0.925, 14.375],
               [19.151, 5.767, 14.375], [17.167, 10.261, 14.375],
               [14.148, 14.137, 14.375], [10.275, 17.159, 14.375],
               [5.782, 19.146, 14.375], [0.941, 19.978, 14.375],
               [-3.958, 19.604, 14.375]]
      radius: 4.0
      kappa: 20.0
      fraction: 0.5
      profile: flat
      axial: 1.7e-3
      radial: 0.2e-3

# Full acquisition: b0 volumes, then each shell with the same directions
""" + GROUP_SCHEME + """:

  """ + CONF_B0 + """: 4
  """ + CONF_SHELLS + """: [1000, 3000]
  """ + CONF_DIRECTIONS + """: 90

# Clinical-style degradation of the simulated DWIs
""" + GROUP_DEGRADE + """:

  # Keep the first volumes of each kind (capped at what the scheme has)
  """ + CONF_KEEP_B0 + """: 4
  """ + CONF_KEEP_PER_SHELL + """: 45

  # Target voxel size (mm) and signal-to-noise ratio (dB, .inf for none)
  """ + CONF_VOXEL_SIZE + """: 2.0
  """ + CONF_SNR_DB + """: 30.0

  # Divide each voxel by its mean b0 after adding noise
  """ + CONF_NORMALIZE_B0 + """: true

# Network shape
""" + GROUP_MODEL + """:

  """ + CONF_LATENT_CHANNELS + """: 32
  """ + CONF_N_BLOCKS + """: 3
  """ + CONF_UNITS_PER_BLOCK + """: 3
  """ + CONF_KERNEL + """: 3
  """ + CONF_POOL_KERNEL + """: 2
  """ + CONF_BATCH_NORM + """: true
  """ + CONF_HIDDEN_LAYERS + """: 3
  """ + CONF_HIDDEN_WIDTH + """: 128
  """ + CONF_FREQUENCIES + """: 4

# Optimisation
""" + GROUP_TRAINING + """:

  # Subjects used for training; keep at least one out for evaluation
  """ + CONF_SUBJECTS + """: [0, 1, 2]
  """ + CONF_LEARNING_RATE + """: 1.0e-3
  """ + CONF_BETA1 + """: 0.9
  """ + CONF_BETA2 + """: 0.999
  """ + CONF_WEIGHT_DECAY + """: 0.0
  """ + CONF_BATCH_QUERIES + """: 2048
  """ + CONF_PATCH_SIZE + """: 16
  """ + CONF_EPOCHS + """: 10
  """ + CONF_STEPS_PER_EPOCH + """: 100
  """ + CONF_LOG_INTERVAL + """: 50

# Prediction of SH volumes from degraded DWIs
""" + GROUP_PREDICT + """:

  """ + CONF_SUBJECTS + """: [3]

  # Output voxel size (mm); leave empty for the ground-truth grid
  """ + CONF_VOXEL_SIZE + """:

# Deterministic tracking; empty values scale with the output voxel size
""" + GROUP_TRACKING + """:

  """ + CONF_STEP_SIZE + """:
  """ + CONF_MAX_ANGLE + """:
  """ + CONF_CUTOFF + """: 0.1
  """ + CONF_MIN_LENGTH + """:
  """ + CONF_MAX_LENGTH + """:
  """ + CONF_MAX_STEPS + """: 10000

# Evaluation
""" + GROUP_SCORING + """:

  # Voxels whose ground-truth c0 exceeds this value are scored
  """ + CONF_MASK_THRESHOLD + """: 0.01

# Settings to configure logging
# Valid severity levels are:
# critical, error, warning, info, debug
""" + GROUP_LOGGER + """:

  """ + CONF_DEFAULT + """: """ + str(DEFAULT_LOGGERLEVEL).lower() + """

  #""" + CONF_NAMESPACES + """:
  #  fenri.training: """ + str(LoggerLevel.Debug).lower() + """
  #  fenri.tracking: """ + str(LoggerLevel.Debug).lower() + """
"""


def _default_settings() -> Dict[str, Any]:
    return yaml.load(DEFAULT_CONFIG, Loader=yaml.SafeLoader)


def _number(settings: Dict[str, Any], group: str, key: str, kind=float,
            minimum: Optional[float] = None, optional: bool = False, strict: bool = False):
    """Read a numeric setting, naming it in any error."""
    value = settings.get(key)
    if value is None:
        if optional:
            return None
        raise ConfigError("{}.{} is required".format(group, key))
    try:
        value = kind(value)
    except (TypeError, ValueError) as ex:
        raise ConfigError("{}.{} must be a {}, got {!r}".format(
            group, key, kind.__name__, value)) from ex
    if kind is float and math.isnan(value):
        raise ConfigError("{}.{} must not be NaN".format(group, key))
    if minimum is not None and (value < minimum or (strict and value == minimum)):
        raise ConfigError("{}.{} must be {} {}, got {}".format(
            group, key, '>' if strict else '>=', minimum, value))
    return value


def _index_list(settings: Dict[str, Any], group: str, key: str) -> List[int]:
    value = settings.get(key)
    if value is None:
        return []
    if isinstance(value, int):
        value = [value]
    try:
        return [int(item) for item in value]
    except (TypeError, ValueError) as ex:
        raise ConfigError("{}.{} must be a list of integers".format(group, key)) from ex


class Config(object):
    """Contains the configuration settings."""

    def __init__(self, settings: Dict[str, Any], is_default: bool):
        unknown = set(settings) - set(GROUPS)
        if unknown:
            raise ConfigError("unknown configuration group(s): {}".format(
                ', '.join(sorted(unknown))))
        defaults = _default_settings()
        merged = {}
        for group in GROUPS:
            merged[group] = dict(defaults.get(group) or {})
            values = settings.get(group) or {}
            if not isinstance(values, dict):
                raise ConfigError("configuration group '{}' must be a mapping".format(group))
            unknown = set(values) - set(merged[group])
            if group != GROUP_LOGGER and unknown:
                raise ConfigError("unknown setting(s) in '{}': {}".format(
                    group, ', '.join(sorted(unknown))))
            merged[group].update(values)
        self._run = RunConfig(merged[GROUP_RUN])
        self._phantom = PhantomConfig(merged[GROUP_PHANTOM])
        self._scheme = SchemeConfig(merged[GROUP_SCHEME])
        self._degrade = DegradeConfig(merged[GROUP_DEGRADE])
        self._model = ModelConfig(merged[GROUP_MODEL])
        self._training = TrainingConfig(merged[GROUP_TRAINING])
        self._predict = PredictConfig(merged[GROUP_PREDICT])
        self._tracking = TrackingConfig(merged[GROUP_TRACKING])
        self._scoring = ScoringConfig(merged[GROUP_SCORING])
        self._logger = LoggerConfig(settings.get(GROUP_LOGGER))
        self._settings = merged
        self._is_default = is_default

    @property
    def is_default(self) -> bool:
        """True if default configuration file was created; otherwise, False."""
        return self._is_default

    @property
    def run(self) -> 'RunConfig':
        """Configuration settings for the Run group."""
        return self._run

    @property
    def phantom(self) -> 'PhantomConfig':
        """Configuration settings for the Phantom group."""
        return self._phantom

    @property
    def scheme(self) -> 'SchemeConfig':
        """Configuration settings for the Scheme group."""
        return self._scheme

    @property
    def degrade(self) -> 'DegradeConfig':
        """Configuration settings for the Degrade group."""
        return self._degrade

    @property
    def model(self) -> 'ModelConfig':
        """Configuration settings for the Model group."""
        return self._model

    @property
    def training(self) -> 'TrainingConfig':
        """Configuration settings for the Training group."""
        return self._training

    @property
    def predict(self) -> 'PredictConfig':
        """Configuration settings for the Predict group."""
        return self._predict

    @property
    def tracking(self) -> 'TrackingConfig':
        """Configuration settings for the Tracking group."""
        return self._tracking

    @property
    def scoring(self) -> 'ScoringConfig':
        """Configuration settings for the Scoring group."""
        return self._scoring

    @property
    def logger(self) -> 'LoggerConfig':
        """Configuration settings for the Logger group."""
        return self._logger

    @classmethod
    def load(cls, config_path: str, overrides: Optional[Dict[str, Any]] = None) -> 'Config':
        """
        Load the configuration file, or create default if none exists.

        ``overrides`` maps 'group.key' to values taking precedence over the file.
        """
        is_default = False

        if os.path.isfile(config_path):
            _LOGGER.debug("Loading configuration file '%s'", config_path)
        else:
            _LOGGER.debug("Creating default configuration file '%s'", config_path)
            try:
                with open(config_path, 'wt') as config_file:
                    config_file.write(DEFAULT_CONFIG)
            except OSError as ex:
                raise ConfigError("failed to create default configuration file '{}': {}".format(
                    config_path, ex)) from ex
            is_default = True

        try:
            with open(config_path, encoding='utf-8') as config_file:
                settings = yaml.load(config_file, Loader=yaml.SafeLoader) or {}
        except (OSError, yaml.YAMLError) as ex:
            raise ConfigError("failed to parse configuration file '{}': {}".format(
                config_path, ex)) from ex
        if not isinstance(settings, dict):
            raise ConfigError("configuration file '{}' must hold a mapping".format(config_path))

        for path, value in (overrides or {}).items():
            group, _, key = path.partition('.')
            if not key or group not in GROUPS:
                raise ConfigError("override '{}' must look like group.key with a known group".format(
                    path))
            settings.setdefault(group, {})
            if settings[group] is None:
                settings[group] = {}
            settings[group][key] = value

        return Config(settings, is_default)

    def as_dict(self) -> Dict[str, Any]:
        """Fully resolved settings."""
        resolved = {group: dict(values) for group, values in self._settings.items()}
        resolved[GROUP_LOGGER] = self._logger.as_dict()
        return resolved

    def dump(self, path: str) -> None:
        """Write the resolved settings as YAML."""
        with open(path, 'wt', encoding='utf-8') as config_file:
            yaml.safe_dump(self.as_dict(), config_file, sort_keys=False, default_flow_style=None)

    def __repr__(self):
        return "<{}: is_default={}, {}, {}, {}, {}, {}, {}, {}, {}, {}, {}>".format(
            self.__class__.__name__,
            self._is_default,
            self._run,
            self._phantom,
            self._scheme,
            self._degrade,
            self._model,
            self._training,
            self._predict,
            self._tracking,
            self._scoring,
            self._logger,
        )


class RunConfig(object):
    """Configuration settings shared by every command."""

    def __init__(self, settings: Dict[str, Any]):
        self._seed = _number(settings, GROUP_RUN, CONF_SEED, int, 0)
        self._threads = _number(settings, GROUP_RUN, CONF_THREADS, int, 1)
        self._output = str(settings.get(CONF_OUTPUT) or '.')

    @property
    def seed(self) -> int:
        """Seed for all random draws."""
        return self._seed

    @property
    def threads(self) -> int:
        """Worker thread count."""
        return self._threads

    @property
    def output(self) -> str:
        """Run directory."""
        return self._output

    def __repr__(self):
        return "<{}: seed={}, threads={}, output={}>".format(
            self.__class__.__name__,
            self._seed,
            self._threads,
            self._output,
        )


class PhantomConfig(object):
    """Configuration settings for the synthetic phantom."""

    def __init__(self, settings: Dict[str, Any]):
        shape = settings.get(CONF_SHAPE)
        if not isinstance(shape, (list, tuple)) or len(shape) != 3:
            raise ConfigError("{}.{} must list 3 voxel counts".format(GROUP_PHANTOM, CONF_SHAPE))
        self._shape = [int(n) for n in shape]
        self._voxel_size = _number(settings, GROUP_PHANTOM, CONF_VOXEL_SIZE, float, 0, strict=True)
        origin = settings.get(CONF_ORIGIN) or [0.0, 0.0, 0.0]
        if len(origin) != 3:
            raise ConfigError("{}.{} must hold 3 coordinates".format(GROUP_PHANTOM, CONF_ORIGIN))
        self._origin = [float(x) for x in origin]
        self._s0 = _number(settings, GROUP_PHANTOM, CONF_S0, float, 0, strict=True)
        self._background_diffusivity = _number(
            settings, GROUP_PHANTOM, CONF_BACKGROUND_DIFFUSIVITY, float, 0, strict=True)
        self._background_odf_weight = _number(
            settings, GROUP_PHANTOM, CONF_BACKGROUND_ODF_WEIGHT, float, 0)
        self._subjects = _number(settings, GROUP_PHANTOM, CONF_SUBJECTS, int, 1)
        self._jitter = _number(settings, GROUP_PHANTOM, CONF_JITTER, float, 0)
        self._streamlines = _number(settings, GROUP_PHANTOM, CONF_STREAMLINES, int, 1)
        bundles = settings.get(CONF_BUNDLES) or []
        if not isinstance(bundles, list) or not all(isinstance(b, dict) for b in bundles):
            raise ConfigError("{}.{} must be a list of bundle mappings".format(
                GROUP_PHANTOM, CONF_BUNDLES))
        self._bundles = bundles

    @property
    def shape(self) -> List[int]:
        """Voxel counts."""
        return self._shape

    @property
    def voxel_size(self) -> float:
        """Isotropic voxel size (mm)."""
        return self._voxel_size

    @property
    def origin(self) -> List[float]:
        """Center of voxel (0,0,0) (mm)."""
        return self._origin

    @property
    def s0(self) -> float:
        """Unweighted signal."""
        return self._s0

    @property
    def background_diffusivity(self) -> float:
        """Isotropic diffusivity (mm^2/s)."""
        return self._background_diffusivity

    @property
    def background_odf_weight(self) -> float:
        """Isotropic share of the background in the fODF."""
        return self._background_odf_weight

    @property
    def subjects(self) -> int:
        """Number of phantom variants."""
        return self._subjects

    @property
    def jitter(self) -> float:
        """Control point displacement of variants (mm)."""
        return self._jitter

    @property
    def streamlines(self) -> int:
        """Ground-truth streamlines per bundle."""
        return self._streamlines

    @property
    def bundles(self) -> List[Dict[str, Any]]:
        """Bundle descriptions."""
        return self._bundles

    def build(self):
        """Phantom described by these settings."""
        from fenri.phantom import Phantom
        try:
            return Phantom.from_dict({
                'shape': self._shape,
                'voxel_size': self._voxel_size,
                'origin': self._origin,
                's0': self._s0,
                'background_diffusivity': self._background_diffusivity,
                'background_odf_weight': self._background_odf_weight,
                'bundles': self._bundles,
            })
        except (FenriError, KeyError, TypeError, ValueError) as ex:
            raise ConfigError("{}: {}".format(GROUP_PHANTOM, ex)) from ex

    def __repr__(self):
        return "<{}: shape={}, voxel_size={}, subjects={}, bundles={}>".format(
            self.__class__.__name__,
            self._shape,
            self._voxel_size,
            self._subjects,
            [bundle.get('name') for bundle in self._bundles],
        )


class SchemeConfig(object):
    """Configuration settings for the full acquisition scheme."""

    def __init__(self, settings: Dict[str, Any]):
        self._b0 = _number(settings, GROUP_SCHEME, CONF_B0, int, 0)
        shells = settings.get(CONF_SHELLS) or []
        try:
            self._shells = [float(b) for b in shells]
        except (TypeError, ValueError) as ex:
            raise ConfigError("{}.{} must list b-values".format(GROUP_SCHEME, CONF_SHELLS)) from ex
        if not self._shells or min(self._shells) <= 0:
            raise ConfigError("{}.{} must list positive b-values".format(GROUP_SCHEME, CONF_SHELLS))
        self._directions = _number(settings, GROUP_SCHEME, CONF_DIRECTIONS, int, 1)

    @property
    def b0(self) -> int:
        """Number of b0 volumes."""
        return self._b0

    @property
    def shells(self) -> List[float]:
        """b-values of the shells (s/mm^2)."""
        return self._shells

    @property
    def directions(self) -> int:
        """Gradient directions per shell."""
        return self._directions

    def __repr__(self):
        return "<{}: b0={}, shells={}, directions={}>".format(
            self.__class__.__name__,
            self._b0,
            self._shells,
            self._directions,
        )


class DegradeConfig(object):
    """Configuration settings for the degradation pipeline."""

    def __init__(self, settings: Dict[str, Any]):
        self._keep_b0 = _number(settings, GROUP_DEGRADE, CONF_KEEP_B0, int, 0)
        self._keep_per_shell = _number(settings, GROUP_DEGRADE, CONF_KEEP_PER_SHELL, int, 1)
        self._voxel_size = _number(settings, GROUP_DEGRADE, CONF_VOXEL_SIZE, float, 0,
                                   optional=True, strict=True)
        snr = settings.get(CONF_SNR_DB)
        self._snr_db = math.inf if snr is None else _number(settings, GROUP_DEGRADE, CONF_SNR_DB)
        self._normalize_b0 = bool(settings.get(CONF_NORMALIZE_B0, True))

    @property
    def keep_b0(self) -> int:
        """Leading b0 volumes kept."""
        return self._keep_b0

    @property
    def keep_per_shell(self) -> int:
        """Leading volumes of each shell kept."""
        return self._keep_per_shell

    @property
    def voxel_size(self) -> Optional[float]:
        """Degraded voxel size (mm); None keeps the grid."""
        return self._voxel_size

    @property
    def snr_db(self) -> float:
        """Signal-to-noise ratio (dB)."""
        return self._snr_db

    @property
    def normalize_b0(self) -> bool:
        """True to divide by the mean b0 after adding noise."""
        return self._normalize_b0

    def __repr__(self):
        return "<{}: keep={}+{}/shell, voxel_size={}, snr_db={}, normalize_b0={}>".format(
            self.__class__.__name__,
            self._keep_b0,
            self._keep_per_shell,
            self._voxel_size,
            self._snr_db,
            self._normalize_b0,
        )


class ModelConfig(object):
    """Configuration settings for the network shape."""

    def __init__(self, settings: Dict[str, Any]):
        self._latent_channels = _number(settings, GROUP_MODEL, CONF_LATENT_CHANNELS, int, 1)
        self._n_blocks = _number(settings, GROUP_MODEL, CONF_N_BLOCKS, int, 0)
        self._units_per_block = _number(settings, GROUP_MODEL, CONF_UNITS_PER_BLOCK, int, 1)
        self._kernel = _number(settings, GROUP_MODEL, CONF_KERNEL, int, 1)
        self._pool_kernel = _number(settings, GROUP_MODEL, CONF_POOL_KERNEL, int, 1)
        self._batch_norm = bool(settings.get(CONF_BATCH_NORM, True))
        self._hidden_layers = _number(settings, GROUP_MODEL, CONF_HIDDEN_LAYERS, int, 0)
        self._hidden_width = _number(settings, GROUP_MODEL, CONF_HIDDEN_WIDTH, int, 1)
        self._frequencies = _number(settings, GROUP_MODEL, CONF_FREQUENCIES, int, 0)

    @property
    def latent_channels(self) -> int:
        """Latent vector length."""
        return self._latent_channels

    @property
    def n_blocks(self) -> int:
        """Cascading residual blocks."""
        return self._n_blocks

    @property
    def units_per_block(self) -> int:
        """Residual units per block."""
        return self._units_per_block

    @property
    def kernel(self) -> int:
        """Convolution kernel size."""
        return self._kernel

    @property
    def pool_kernel(self) -> int:
        """Output smoothing pool size."""
        return self._pool_kernel

    @property
    def batch_norm(self) -> bool:
        """True to end the encoder with batch norm."""
        return self._batch_norm

    @property
    def hidden_layers(self) -> int:
        """Decoder hidden layers."""
        return self._hidden_layers

    @property
    def hidden_width(self) -> int:
        """Decoder hidden width."""
        return self._hidden_width

    @property
    def frequencies(self) -> int:
        """Positional encoding frequencies."""
        return self._frequencies

    def encoder_config(self, in_channels: int):
        from fenri.field import EncoderConfig
        try:
            return EncoderConfig(in_channels, self._latent_channels, self._n_blocks, self._kernel,
                                 self._pool_kernel, self._batch_norm, self._units_per_block)
        except FenriError as ex:
            raise ConfigError("{}: {}".format(GROUP_MODEL, ex)) from ex

    def decoder_config(self):
        from fenri.field import DecoderConfig
        return DecoderConfig(self._hidden_layers, self._hidden_width, self._frequencies)

    def __repr__(self):
        return "<{}: latent_channels={}, n_blocks={}, hidden={}x{}, frequencies={}>".format(
            self.__class__.__name__,
            self._latent_channels,
            self._n_blocks,
            self._hidden_layers,
            self._hidden_width,
            self._frequencies,
        )


class TrainingConfig(object):
    """Configuration settings for optimisation."""

    def __init__(self, settings: Dict[str, Any]):
        self._subjects = _index_list(settings, GROUP_TRAINING, CONF_SUBJECTS)
        if not self._subjects:
            raise ConfigError("{}.{} must name at least one subject".format(
                GROUP_TRAINING, CONF_SUBJECTS))
        self._learning_rate = _number(settings, GROUP_TRAINING, CONF_LEARNING_RATE, float, 0)
        self._beta1 = _number(settings, GROUP_TRAINING, CONF_BETA1, float, 0)
        self._beta2 = _number(settings, GROUP_TRAINING, CONF_BETA2, float, 0)
        if self._beta1 >= 1 or self._beta2 >= 1:
            raise ConfigError("{}.{} and {} must be below 1".format(
                GROUP_TRAINING, CONF_BETA1, CONF_BETA2))
        self._weight_decay = _number(settings, GROUP_TRAINING, CONF_WEIGHT_DECAY, float, 0)
        self._batch_queries = _number(settings, GROUP_TRAINING, CONF_BATCH_QUERIES, int, 1)
        self._patch_size = _number(settings, GROUP_TRAINING, CONF_PATCH_SIZE, int, 2)
        self._epochs = _number(settings, GROUP_TRAINING, CONF_EPOCHS, int, 0)
        self._steps_per_epoch = _number(settings, GROUP_TRAINING, CONF_STEPS_PER_EPOCH, int, 1)
        self._log_interval = _number(settings, GROUP_TRAINING, CONF_LOG_INTERVAL, int, 1)

    @property
    def subjects(self) -> List[int]:
        """Training subjects."""
        return self._subjects

    @property
    def learning_rate(self) -> float:
        """Adam step size."""
        return self._learning_rate

    @property
    def epochs(self) -> int:
        """Epoch count."""
        return self._epochs

    @property
    def steps_per_epoch(self) -> int:
        """Steps per epoch."""
        return self._steps_per_epoch

    def train_config(self, seed: int):
        """Schedule for :func:`fenri.training.train`."""
        from fenri.training import TrainConfig
        return TrainConfig(self._learning_rate, self._batch_queries, self._epochs,
                           self._steps_per_epoch, seed, self._patch_size,
                           (self._beta1, self._beta2), weight_decay=self._weight_decay,
                           log_interval=self._log_interval)

    def __repr__(self):
        return "<{}: subjects={}, learning_rate={}, steps={}x{}>".format(
            self.__class__.__name__,
            self._subjects,
            self._learning_rate,
            self._epochs,
            self._steps_per_epoch,
        )


class PredictConfig(object):
    """Configuration settings for SH prediction."""

    def __init__(self, settings: Dict[str, Any]):
        self._subjects = _index_list(settings, GROUP_PREDICT, CONF_SUBJECTS)
        self._voxel_size = _number(settings, GROUP_PREDICT, CONF_VOXEL_SIZE, float, 0,
                                   optional=True, strict=True)

    @property
    def subjects(self) -> List[int]:
        """Subjects to predict and score."""
        return self._subjects

    @property
    def voxel_size(self) -> Optional[float]:
        """Output voxel size (mm); None for the ground-truth grid."""
        return self._voxel_size

    def __repr__(self):
        return "<{}: subjects={}, voxel_size={}>".format(
            self.__class__.__name__,
            self._subjects,
            self._voxel_size,
        )


class TrackingConfig(object):
    """Configuration settings for tracking."""

    def __init__(self, settings: Dict[str, Any]):
        self._step_size = _number(settings, GROUP_TRACKING, CONF_STEP_SIZE, float, 0,
                                  optional=True, strict=True)
        self._max_angle = _number(settings, GROUP_TRACKING, CONF_MAX_ANGLE, float, 0,
                                  optional=True, strict=True)
        self._cutoff = _number(settings, GROUP_TRACKING, CONF_CUTOFF, float, 0)
        self._min_length = _number(settings, GROUP_TRACKING, CONF_MIN_LENGTH, float, 0,
                                   optional=True)
        self._max_length = _number(settings, GROUP_TRACKING, CONF_MAX_LENGTH, float, 0,
                                   optional=True, strict=True)
        self._max_steps = _number(settings, GROUP_TRACKING, CONF_MAX_STEPS, int, 0)

    @property
    def cutoff(self) -> float:
        """fODF amplitude cutoff."""
        return self._cutoff

    @property
    def max_steps(self) -> int:
        """Step budget per half-track."""
        return self._max_steps

    def params(self, voxel_size: float):
        """Tracking parameters for an output grid with the given voxel size."""
        from fenri.tracking import TrackingParams
        extra = {}
        if self._min_length is not None:
            extra['min_length'] = self._min_length
        if self._max_length is not None:
            extra['max_length'] = self._max_length
        try:
            return TrackingParams.for_voxel(voxel_size, self._step_size, self._max_angle,
                                            amplitude_cutoff=self._cutoff,
                                            max_steps=self._max_steps, **extra)
        except FenriError as ex:
            raise ConfigError("{}: {}".format(GROUP_TRACKING, ex)) from ex

    def __repr__(self):
        return "<{}: step_size={}, max_angle={}, cutoff={}, length=[{}, {}], max_steps={}>".format(
            self.__class__.__name__,
            self._step_size,
            self._max_angle,
            self._cutoff,
            self._min_length,
            self._max_length,
            self._max_steps,
        )


class ScoringConfig(object):
    """Configuration settings for evaluation."""

    def __init__(self, settings: Dict[str, Any]):
        self._mask_threshold = _number(settings, GROUP_SCORING, CONF_MASK_THRESHOLD, float)

    @property
    def mask_threshold(self) -> float:
        """Ground-truth c0 above which voxels are scored."""
        return self._mask_threshold

    def __repr__(self):
        return "<{}: mask_threshold={}>".format(
            self.__class__.__name__,
            self._mask_threshold,
        )


class LoggerConfig(object):
    """Configuration settings for logging."""

    def __init__(self, settings: Optional[Dict[str, Any]]):
        self._default = DEFAULT_LOGGERLEVEL
        self._namespaces = {}

        if not settings:
            return

        if settings.get(CONF_DEFAULT) is not None:
            self._default = self._parse(settings.get(CONF_DEFAULT), CONF_DEFAULT)

        namespaces = settings.get(CONF_NAMESPACES)
        if namespaces:
            for namespace in namespaces.items():
                self._namespaces[namespace[0]] = self._parse(namespace[1], namespace[0])

    @staticmethod
    def _parse(name: Any, key: str) -> LoggerLevel:
        level = LoggerLevel.parse_name(name)
        if level is None:
            raise ConfigError("{}.{}: unknown level '{}'".format(GROUP_LOGGER, key, name))
        return level

    @property
    def default(self) -> LoggerLevel:
        """Default minimum severity level for logging."""
        return self._default

    @property
    def namespaces(self) -> Dict[str, LoggerLevel]:
        """Minimum severity level for a specific namespace."""
        return self._namespaces

    def as_dict(self) -> Dict[str, Any]:
        return {
            CONF_DEFAULT: str(self._default).lower(),
            CONF_NAMESPACES: {name: str(level).lower() for name, level in self._namespaces.items()},
        }

    def __repr__(self):
        return "<{}: default={}, namespaces={}>".format(
            self.__class__.__name__,
            str(self._default),
            self._namespaces,
        )
