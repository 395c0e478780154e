"""
This module contains all common constants used by this application.
"""

import math

# Project metadata
PROJECT_NAME = 'fenri'
PROJECT_DESCRIPTION = "Continuous fiber orientation fields from low-resolution diffusion MRI."
PROJECT_VERSION = '0.1.0'
__version__ = PROJECT_VERSION

# Exit codes
EX_OK = 0
EX_SOFTWARE = 1
EX_USAGE = 2
EX_DATAERR = 3
EX_NUMERIC = 4

# Spherical harmonics; even degrees only
SH_LMAX = 8
SH_COEFFS = 45
Y00 = 0.5 / math.sqrt(math.pi)

# Peak extraction
PEAK_MIN_AMPLITUDE = 0.1
PEAK_SEPARATION_DEG = 5.0
PEAK_REFINE_TOLERANCE = 1e-6
PEAK_REFINE_ITERATIONS = 100

# Angular error scoring
WAAE_TARGET_PEAKS = 2
WAAE_PREDICTED_PEAKS = 3
WAAE_PENALTY = 0.0073 * math.pi / 2

# Tissue defaults (mm^2/s)
DIFFUSIVITY_AXIAL = 1.7e-3
DIFFUSIVITY_RADIAL = 0.2e-3
DIFFUSIVITY_ISOTROPIC = 3.0e-3
WATSON_KAPPA = 20.0

# Tracking defaults, in the SD-Stream convention
TRACK_STEP_VOXELS = 0.1
TRACK_ANGLE_DEG = 60.0
TRACK_MIN_LENGTH_VOXELS = 5.0
TRACK_MAX_LENGTH_VOXELS = 100.0
TRACK_MAX_STEPS = 10000

# Checkpoint container
CHECKPOINT_FORMAT = 'fenri-checkpoint'
CHECKPOINT_VERSION = 1
