"""Hot inner-loop kernels with a compiled core and a numpy fallback.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
numpy module ``_pykernels`` is used.  ``GATECNN_BACKEND=python`` (or
``cython``) forces a choice.  Both produce bit-identical results.
"""

import importlib
import os

from . import _pykernels

_NAMES = {"python": "_pykernels", "cython": "_ckernels"}


def get_backend(name):
    """Return the kernel module for ``name`` ('python' or 'cython')."""
    if name not in _NAMES:
        raise ValueError(f"unknown kernel backend {name!r}")
    return importlib.import_module(f".{_NAMES[name]}", __name__)


def available_backends():
    found = ["python"]
    try:
        get_backend("cython")
        found.append("cython")
    except ImportError:
        pass
    return found


def _select():
    forced = os.environ.get("GATECNN_BACKEND")
    if forced:
        return get_backend(forced)
    try:
        return get_backend("cython")
    except ImportError:
        return _pykernels


active = _select()
BACKEND = active.BACKEND
