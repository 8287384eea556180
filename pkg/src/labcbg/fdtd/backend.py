"""Kernel backend selection.

The compiled Cython module is used when it imports; otherwise the numpy
implementation is used. Set ``LABCBG_BACKEND=python`` to force the fallback.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _kernels_ext
except ImportError:  # extension not built
    _kernels_ext = None

_BACKENDS = {"python": _kernels_py}
if _kernels_ext is not None:
    _BACKENDS["cython"] = _kernels_ext


def available():
    return sorted(_BACKENDS)


def get(name=None):
    """Return the kernel module for ``name`` (None picks the default)."""
    if name is None:
        name = os.environ.get("LABCBG_BACKEND") or ("cython" if _kernels_ext else "python")
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available()}") from None


DEFAULT = "cython" if _kernels_ext is not None and os.environ.get("LABCBG_BACKEND") != "python" else "python"
