"""Hot numerical kernels.

The compiled Cython module is used when it was built; otherwise the numpy
implementation is loaded. Set ``WINDCAST_PURE_PYTHON=1`` to force the numpy
backend. Both backends produce bit-identical results.
"""

import os

from . import _pykernels as pykernels

try:
    if os.environ.get("WINDCAST_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _ckernels as ckernels
except ImportError:
    ckernels = None

_active = ckernels if ckernels is not None else pykernels

BACKEND = _active.BACKEND
best_split = _active.best_split
partition_sorted = _active.partition_sorted
rolling_stats = _active.rolling_stats
predict_forest = _active.predict_forest


def available_backends():
    """Kernel modules importable in this environment, numpy first."""
    mods = [pykernels]
    if ckernels is not None:
        mods.append(ckernels)
    return mods
