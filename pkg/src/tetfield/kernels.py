"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise, or
when ``TETFIELD_PURE_PYTHON=1`` is set, the numpy fallback is used.  Both
expose ``encode_forward``, ``encode_backward`` and ``corner_slots``.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("TETFIELD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

encode_forward = _impl.encode_forward
encode_backward = _impl.encode_backward
corner_slots = _impl.corner_slots


def get_backend(name: str):
    """Return the kernel module for ``"python"`` or ``"cython"`` explicitly."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
