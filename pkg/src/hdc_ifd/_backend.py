"""Kernel backend selection.

The compiled extension is preferred. Set ``HDC_IFD_BACKEND=python`` to
force the numpy fallback, or ``HDC_IFD_BACKEND=compiled`` to fail loudly
when the extension is missing.
"""

import os
import types

from . import _fallback

_choice = os.environ.get("HDC_IFD_BACKEND", "auto").lower()

# the BLAS-backed im2col forward convolution beats the compiled loop, so it is kept
BLAS_KERNELS = ("conv1d_forward",)


def _mixed(compiled):
    ns = types.SimpleNamespace(**{name: getattr(compiled, name) for name in _fallback.__all__})
    for name in BLAS_KERNELS:
        setattr(ns, name, getattr(_fallback, name))
    ns.__name__ = compiled.__name__
    return ns


if _choice == "python":
    kernels = _fallback
else:
    try:
        from . import _kernels
        kernels = _mixed(_kernels)
    except ImportError:
        if _choice == "compiled":
            raise
        kernels = _fallback

BACKEND = "compiled" if kernels is not _fallback else "python"


def get_kernels(name=None):
    """Return the kernel module for ``name`` ("compiled" / "python"), default the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
