"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the NumPy
fallback is used. Setting COULOMBGAP_PURE_PYTHON=1 forces the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
log_moments = _pykernels.log_moments
invert_tables = _pykernels.invert_tables

if os.environ.get("COULOMBGAP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        log_moments = _ckernels.log_moments
        invert_tables = _ckernels.invert_tables

__all__ = ["BACKEND", "log_moments", "invert_tables"]
