"""Hot kernels with a compiled core and a pure-Python fallback.

The compiled module is used when it was built (``pip install -e .`` builds it)
unless ``DMARL_PURE_PYTHON=1`` is set. ``BACKEND`` names the active one.
"""

import os

from . import _fallback

_FORCE_PURE = os.environ.get("DMARL_PURE_PYTHON", "") not in ("", "0")

_compiled = None
if not _FORCE_PURE:
    try:
        from . import _core as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _fallback
BACKEND = "compiled" if _compiled is not None else "python"

flood_fill_count = _impl.flood_fill_count
raycast = _impl.raycast
gae = _impl.gae

SENSE_UNKNOWN = _fallback.SENSE_UNKNOWN
SENSE_FREE = _fallback.SENSE_FREE
SENSE_HIT = _fallback.SENSE_HIT


def backends():
    """Map of available backend name to module, for tests and benchmarks."""
    found = {"python": _fallback}
    if _compiled is not None:
        found["compiled"] = _compiled
    else:
        try:
            from . import _core
            found["compiled"] = _core
        except ImportError:
            pass
    return found
