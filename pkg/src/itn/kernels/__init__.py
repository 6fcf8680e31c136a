"""Kernel backend selection.

ITN_KERNELS=numba (default) uses the jitted kernels; ITN_KERNELS=numpy
forces the pure-numpy path. Falls back to numpy automatically when numba
cannot be imported.
"""

import os
import warnings

_requested = os.environ.get("ITN_KERNELS", "numba").strip().lower()

if _requested not in ("numba", "numpy"):
    raise ValueError(f"ITN_KERNELS must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import numba_backend as backend
    except ImportError:  # pragma: no cover
        warnings.warn("numba unavailable; falling back to numpy kernels")
        from . import numpy_backend as backend
else:
    from . import numpy_backend as backend

BACKEND = backend.NAME

conv2d_forward = backend.conv2d_forward
conv2d_input_grad = backend.conv2d_input_grad
conv2d_kernel_grad = backend.conv2d_kernel_grad
bilinear_forward = backend.bilinear_forward
bilinear_input_grads = backend.bilinear_input_grads
