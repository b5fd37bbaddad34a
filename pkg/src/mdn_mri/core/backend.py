"""Kernel backend selection.

The compiled extension is preferred; the numpy implementation is used when
it is not built or when ``MDN_BACKEND=python`` is set in the environment.
"""

import os

from . import _conv_py

NAME = "python"
_impl = _conv_py

if os.environ.get("MDN_BACKEND", "").lower() != "python":
    try:
        from . import _conv_ext
    except ImportError:  # extension not built
        pass
    else:
        _impl = _conv_ext
        NAME = "cython"

im2col = _impl.im2col
col2im = _impl.col2im
conv_forward = _impl.conv_forward
conv_backward = _impl.conv_backward


def get(name):
    """Return the kernel module for ``name`` ("python" or "cython")."""
    if name == "python":
        return _conv_py
    if name == "cython":
        from . import _conv_ext
        return _conv_ext
    raise ValueError(f"unknown backend {name!r}")
