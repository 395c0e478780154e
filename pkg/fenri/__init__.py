"""
Continuous fiber orientation fields from low-resolution diffusion MRI.
"""

from fenri.const import PROJECT_VERSION as __version__  # noqa: F401
