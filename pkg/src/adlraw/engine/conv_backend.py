"""Convolution backend selection.

The compiled Cython kernels are preferred when importable; otherwise the
numpy im2col fallback is used. Set ADLRAW_CONV_BACKEND=numpy to force the
fallback (used by the benchmark and by tests that compare both paths).
"""

import os

from . import _conv_numpy

_FORCED = os.environ.get("ADLRAW_CONV_BACKEND", "").strip().lower()

if _FORCED == "numpy":
    _impl = _conv_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _convkernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = _conv_numpy
        BACKEND = "numpy"

conv_forward = _impl.conv_forward
conv_backward_input = _impl.conv_backward_input
conv_backward_weight = _impl.conv_backward_weight


def get_backends():
    """Return {name: module} for every available backend (for benchmarks)."""
    out = {"numpy": _conv_numpy}
    try:
        from . import _convkernels

        out["compiled"] = _convkernels
    except ImportError:
        pass
    return out
