"""Kernel backend selection.

The compiled extension ``_ckernels`` is used when importable; otherwise the numpy
implementations in ``_kernels_py`` take over. Set ``SMARTATTACK_PURE_PYTHON=1`` to
force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SMARTATTACK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def _c3(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _idx(a):
    return np.ascontiguousarray(a, dtype=np.intp)


def im2col(x, k, pad):
    return _impl.im2col(_c3(x), k, pad)


def col2im(cols, t, c, k, pad):
    return _impl.col2im(_c3(cols), t, c, k, pad)


def bone_lengths(x, child, parent):
    return _impl.bone_lengths(_c3(x), _idx(child), _idx(parent))


def bone_lengths_vjp(x, lengths, g, child, parent):
    return _impl.bone_lengths_vjp(_c3(x), _c3(lengths), _c3(g), _idx(child), _idx(parent))


def forward_diff(x, n):
    return _impl.forward_diff(_c3(x), n)


def forward_diff_adjoint(g, n):
    return _impl.forward_diff_adjoint(_c3(g), n)


def backends():
    """Map of available backend name -> module, for tests and benchmarks."""
    found = {"python": _kernels_py}
    try:
        from . import _ckernels
        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
