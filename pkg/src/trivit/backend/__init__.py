"""Kernel backend selection.

The compiled extension (``kernels_cy``) is preferred when it built; the
numpy module (``kernels_py``) is the always-available fallback.  Selection
happens once at import, can be forced with the ``TRIVIT_BACKEND``
environment variable (``cy`` | ``py``), and can be switched at runtime
with :func:`set_backend` (used by the benchmark and tests).
"""

import os

from . import kernels_py

_BACKENDS = {"py": kernels_py}

try:
    from . import kernels_cy

    _BACKENDS["cy"] = kernels_cy
except ImportError:
    kernels_cy = None

active = None


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    """Return a kernel module by name; raises KeyError if not built."""
    return _BACKENDS[name]


def set_backend(name):
    """Switch the active kernel set; returns the previous backend name."""
    global active
    previous = active.NAME if active is not None else None
    active = _BACKENDS[name]
    return previous


def backend_name():
    return active.NAME


_requested = os.environ.get("TRIVIT_BACKEND", "").strip().lower()
if _requested:
    if _requested not in _BACKENDS:
        raise ImportError(
            f"TRIVIT_BACKEND={_requested!r} not available; built backends: {available_backends()}"
        )
    set_backend(_requested)
else:
    set_backend("cy" if "cy" in _BACKENDS else "py")
