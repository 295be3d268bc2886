"""Pick the compiled kernels when available, the numpy fallback otherwise.

Set ``PULSEMAP_BACKEND=python`` to force the fallback, or ``cython`` to make
a missing extension an import error instead of a silent downgrade.
"""

import logging
import os

from pulsemap import _fallback

log = logging.getLogger(__name__)

try:
    from pulsemap import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled


def _select():
    wanted = os.environ.get("PULSEMAP_BACKEND", "").strip().lower()
    if wanted:
        if wanted not in ("python", "cython"):
            raise ImportError(f"PULSEMAP_BACKEND must be 'python' or 'cython', got {wanted!r}")
        if wanted not in BACKENDS:
            raise ImportError("PULSEMAP_BACKEND=cython but pulsemap._kernels is not built")
        return BACKENDS[wanted]
    if _compiled is None:
        log.info("compiled kernels unavailable; using numpy fallback")
        return _fallback
    return _compiled


default = _select()


def get(name=None):
    """Return a backend module by name (``None`` gives the import-time choice)."""
    if name is None:
        return default
    if not isinstance(name, str):
        return name  # already a backend module
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


def default_threads():
    return os.cpu_count() or 1
