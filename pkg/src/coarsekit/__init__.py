"""coarsekit: finite-scale constructions from coarse geometry.

Box spaces of finite quotients, conditionally-negative-type kernel calculus,
fibred coarse embeddings with their scale-indexed kernel families, and the
annular gluing pipeline that assembles a proper negative-type function
approximation with verified variation, decay and properness bounds.
"""

from . import spaces, groups, kernels, fibred, gluing  # noqa: F401

__version__ = "0.1.0"
