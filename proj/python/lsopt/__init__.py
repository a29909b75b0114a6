"""Latent-space black-box optimization with weighted retraining.

Thin python surface over the C++ core: rank weighting and its closed forms,
the dense VAE, the exact-GP surrogate with expected improvement, the square
shapes benchmark (SHP1 datasets), and the full optimization loops.  Images
cross the boundary as 512-byte packed 64x64 bitmaps.
"""

from ._lsopt import *  # noqa: F401,F403
from ._lsopt import __doc__ as _core_doc  # noqa: F401

__version__ = "1.0.0"
