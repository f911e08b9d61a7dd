"""Hot loops: compiled extension when available, NumPy fallback otherwise.

Set ``VOIDFWI_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
if os.environ.get("VOIDFWI_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

march = _impl.march
correlate = _impl.correlate
OK, NONFINITE, GROWTH = _fallback.OK, _fallback.NONFINITE, _fallback.GROWTH

__all__ = ["BACKEND", "march", "correlate", "OK", "NONFINITE", "GROWTH"]
