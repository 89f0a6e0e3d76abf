"""Numerical core: pulse superposition and lagged block sums.

The compiled extension ``_ckernels`` is used when it was built; otherwise the
numpy versions in ``_pykernels`` are loaded. Set ``TWINCAL_PURE_PYTHON=1`` to
force the fallback.
"""

import os

from . import _pykernels as pure

compiled = None
if not os.environ.get("TWINCAL_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled
    except ImportError:  # pragma: no cover - depends on the build
        compiled = None

_active = compiled if compiled is not None else pure
BACKEND = "cython" if compiled is not None else "numpy"

superpose_rect = _active.superpose_rect
superpose_exp = _active.superpose_exp
superpose_gauss = _active.superpose_gauss
lagged_block_sums = _active.lagged_block_sums

__all__ = [
    "BACKEND",
    "compiled",
    "pure",
    "superpose_rect",
    "superpose_exp",
    "superpose_gauss",
    "lagged_block_sums",
]
