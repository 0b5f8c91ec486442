"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback.  ``SIRSTLAB_BACKEND=python`` forces the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("SIRSTLAB_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

im2col = _impl.im2col
col2im = _impl.col2im
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
label8 = _impl.label8
min_filter = _impl.min_filter
max_filter = _impl.max_filter
directional_median_max = _impl.directional_median_max

__all__ = [
    "BACKEND",
    "im2col",
    "col2im",
    "maxpool2_forward",
    "maxpool2_backward",
    "label8",
    "min_filter",
    "max_filter",
    "directional_median_max",
]
