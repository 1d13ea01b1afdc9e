"""Kernel backend selection.

The compiled extension is used when it imports and the tensors are
float32; float64 (used by the finite-difference oracle) and builds without
a compiler go through the numpy fallback.  ``SORNET_BACKEND=python`` forces
the fallback; ``SORNET_THREADS`` caps the compiled kernels' worker count.
"""

import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("SORNET_BACKEND", "").lower() == "python":
        raise ImportError("fallback forced by SORNET_BACKEND")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

NAME = "compiled" if _compiled is not None else "python"


def threads():
    value = os.environ.get("SORNET_THREADS")
    if not value:
        return 1
    return max(1, int(value))


def _impl(dtype, force=None):
    if force == "python" or _compiled is None or dtype != np.float32:
        return _fallback
    if force not in (None, "compiled"):
        raise ValueError(f"unknown backend {force!r}")
    return _compiled


def conv_same(xp, wt, backend=None):
    """Cross-correlate a pre-padded input with a [kh, kw, c_in, c_out] kernel."""
    kh, kw, _, c_out = wt.shape
    n, _, hp, wp = xp.shape
    out = np.empty((n, c_out, hp - kh + 1, wp - kw + 1), dtype=xp.dtype)
    _impl(xp.dtype, backend).conv2d_forward(xp, wt, out, threads())
    return out


def kernel_grad(xp, dy, kh, kw, backend=None):
    """Gradient of a same-size cross-correlation w.r.t. its [c_out, c_in, kh, kw] kernel."""
    dw = np.empty((dy.shape[1], xp.shape[1], kh, kw), dtype=xp.dtype)
    _impl(xp.dtype, backend).conv2d_grad_weight(xp, dy, dw, threads())
    return dw
