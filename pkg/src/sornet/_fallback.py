"""Pure-numpy convolution kernels (im2col + matmul).

Same call signatures as the compiled ``_kernels`` module.  The column
matrix is ordered (kernel-row, kernel-col, in-channel) to match the
compiled reduction order as closely as BLAS allows.
"""

import numpy as np


def _im2col(xp, kh, kw, height, width):
    n, c = xp.shape[:2]
    cols = np.empty((n, kh, kw, c, height, width), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + height, j:j + width]
    return cols.reshape(n, kh * kw * c, height * width)


def conv2d_forward(xp, wt, out, nthreads=1):
    kh, kw, c_in, c_out = wt.shape
    n, _, height, width = out.shape
    if c_in != xp.shape[1] or c_out != out.shape[1]:
        raise ValueError("kernel and tensor channel counts disagree")
    if xp.shape[2] != height + kh - 1 or xp.shape[3] != width + kw - 1:
        raise ValueError("padded input does not match output size")
    cols = _im2col(xp, kh, kw, height, width)
    wm = wt.reshape(kh * kw * c_in, c_out).T
    out[...] = np.matmul(wm, cols).reshape(out.shape)


def conv2d_grad_weight(xp, dy, dw, nthreads=1):
    c_out, c_in, kh, kw = dw.shape
    n, _, height, width = dy.shape
    if xp.shape[1] != c_in or dy.shape[1] != c_out or xp.shape[0] != n:
        raise ValueError("gradient, input and kernel shapes disagree")
    cols = _im2col(xp, kh, kw, height, width)
    g = np.zeros((c_out, kh * kw * c_in), dtype=dw.dtype)
    for i in range(n):
        g += dy[i].reshape(c_out, -1) @ cols[i].T
    dw[...] = g.reshape(c_out, kh, kw, c_in).transpose(0, 3, 1, 2)
