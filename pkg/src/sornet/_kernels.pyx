# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled float32 convolution kernels.

Each output element is written by exactly one worker and summed in the
fixed order (kernel-row, kernel-col, in-channel), so results do not depend
on the thread count.  The register-tiled inner loops live in _conv_tile.h.
"""

from cython.parallel cimport prange, parallel
from libc.stdlib cimport calloc, free
from libc.string cimport memset

cdef extern from "_conv_tile.h" nogil:
    int OB "SORNET_OB"
    int LANES "SORNET_LANES"
    void fwd_tile "sornet_fwd_tile"(const float *x, Py_ssize_t xs_c, Py_ssize_t xs_h,
                                    const float *wt, Py_ssize_t c_in, Py_ssize_t c_out_t,
                                    Py_ssize_t kh, Py_ssize_t kw,
                                    float *dst, Py_ssize_t dst_c, Py_ssize_t nco)
    void fwd_tile_ragged "sornet_fwd_tile_ragged"(const float *x, Py_ssize_t xs_c, Py_ssize_t xs_h,
                                                  const float *wt, Py_ssize_t c_in, Py_ssize_t c_out_t,
                                                  Py_ssize_t kh, Py_ssize_t kw,
                                                  Py_ssize_t nco, Py_ssize_t nlanes,
                                                  float *dst, Py_ssize_t dst_c)
    void dw_plane3x2 "sornet_dw_plane3x2"(const float *dy0, const float *dy1,
                                          const float *xp, Py_ssize_t xs_h,
                                          Py_ssize_t height, Py_ssize_t width,
                                          float *acc0, float *acc1)
    void dw_plane "sornet_dw_plane"(const float *dy, const float *xp, Py_ssize_t xs_h,
                                    Py_ssize_t kh, Py_ssize_t kw,
                                    Py_ssize_t height, Py_ssize_t width, float *acc)


def conv2d_forward(const float[:, :, :, ::1] xp, const float[:, :, :, ::1] wt,
                   float[:, :, :, ::1] out, int nthreads=1):
    """Same-size cross-correlation of a pre-padded input into ``out``.

    ``wt`` is the kernel transposed to [kh, kw, c_in, c_out].
    """
    cdef Py_ssize_t n_batch = out.shape[0], c_out = out.shape[1]
    cdef Py_ssize_t height = out.shape[2], width = out.shape[3]
    cdef Py_ssize_t kh = wt.shape[0], kw = wt.shape[1], c_in = wt.shape[2]
    cdef Py_ssize_t n_blk = (c_out + OB - 1) // OB
    cdef Py_ssize_t xs_c = xp.shape[2] * xp.shape[3], xs_h = xp.shape[3]
    cdef Py_ssize_t os_c = height * width
    cdef Py_ssize_t job, n, co0, nco, h, j0, nl
    if c_in != xp.shape[1] or wt.shape[3] != c_out:
        raise ValueError("kernel and tensor channel counts disagree")
    if xp.shape[2] != height + kh - 1 or xp.shape[3] != width + kw - 1:
        raise ValueError("padded input does not match output size")
    with nogil:
        for job in prange(n_batch * n_blk, schedule='static', num_threads=nthreads):
            n = job // n_blk
            co0 = (job % n_blk) * OB
            nco = c_out - co0
            if nco > OB:
                nco = OB
            for h in range(height):
                j0 = 0
                while j0 < width:
                    nl = width - j0
                    if nl > LANES:
                        nl = LANES
                    if nl == LANES:
                        fwd_tile(&xp[n, 0, h, j0], xs_c, xs_h, &wt[0, 0, 0, co0],
                                 c_in, c_out, kh, kw, &out[n, co0, h, j0], os_c, nco)
                    else:
                        fwd_tile_ragged(&xp[n, 0, h, j0], xs_c, xs_h, &wt[0, 0, 0, co0],
                                        c_in, c_out, kh, kw, nco, nl,
                                        &out[n, co0, h, j0], os_c)
                    j0 = j0 + LANES


def conv2d_grad_weight(const float[:, :, :, ::1] xp, const float[:, :, :, ::1] dy,
                       float[:, :, :, ::1] dw, int nthreads=1):
    """Kernel gradient: dw[o, i, ki, kj] = sum over (n, h, w) of dy * shifted input.

    Jobs pair two output channels against one input channel; an odd last
    channel is paired with itself and its duplicate result discarded.
    """
    cdef Py_ssize_t n_batch = dy.shape[0], c_out = dy.shape[1]
    cdef Py_ssize_t height = dy.shape[2], width = dy.shape[3]
    cdef Py_ssize_t c_in = dw.shape[1], kh = dw.shape[2], kw = dw.shape[3]
    cdef Py_ssize_t xs_h = xp.shape[3]
    cdef Py_ssize_t nk = kh * kw
    cdef Py_ssize_t n_pair = (c_out + 1) // 2
    cdef Py_ssize_t job, co0, co1, ci, n, k, l
    cdef float *acc
    cdef float total
    if xp.shape[1] != c_in or dw.shape[0] != c_out or xp.shape[0] != n_batch:
        raise ValueError("gradient, input and kernel shapes disagree")
    with nogil, parallel(num_threads=nthreads):
        acc = <float *> calloc(2 * nk * LANES, sizeof(float))
        for job in prange(n_pair * c_in, schedule='static'):
            co0 = 2 * (job // c_in)
            co1 = co0 + 1
            if co1 == c_out:
                co1 = co0
            ci = job % c_in
            memset(acc, 0, 2 * nk * LANES * sizeof(float))
            for n in range(n_batch):
                if kh == 3 and kw == 3:
                    dw_plane3x2(&dy[n, co0, 0, 0], &dy[n, co1, 0, 0], &xp[n, ci, 0, 0],
                                xs_h, height, width, acc, acc + nk * LANES)
                else:
                    dw_plane(&dy[n, co0, 0, 0], &xp[n, ci, 0, 0], xs_h, kh, kw,
                             height, width, acc)
                    if co1 != co0:
                        dw_plane(&dy[n, co1, 0, 0], &xp[n, ci, 0, 0], xs_h, kh, kw,
                                 height, width, acc + nk * LANES)
            for k in range(nk):
                total = 0
                for l in range(LANES):
                    total = total + acc[k * LANES + l]
                dw[co0, ci, k // kw, k % kw] = total
                if co1 != co0:
                    total = 0
                    for l in range(LANES):
                        total = total + acc[(nk + k) * LANES + l]
                    dw[co1, ci, k // kw, k % kw] = total
        free(acc)
