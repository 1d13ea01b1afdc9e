/* Register-tiled micro-kernels for 3-D cross-correlation (float32).
 *
 * A tile is OB output channels x LANES consecutive output columns of one
 * output row.  Each element's sum runs over (kernel-row, kernel-col,
 * in-channel) in that order.
 */
#ifndef SORNET_CONV_TILE_H
#define SORNET_CONV_TILE_H

#include <stddef.h>
#include <string.h>

#define SORNET_OB 8
#define SORNET_LANES 16

typedef float sornet_v16 __attribute__((vector_size(64)));

static inline sornet_v16 sornet_load(const float *p)
{
    sornet_v16 v;
    memcpy(&v, p, sizeof(v));
    return v;
}

static inline void sornet_store(float *p, sornet_v16 v)
{
    memcpy(p, &v, sizeof(v));
}

/* One tile of NCO output channels (NCO <= OB, a compile-time constant after
 * inlining) by LANES columns.  wt is [kh][kw][c_in][c_out_t]. */
static inline __attribute__((always_inline))
void sornet_fwd_tile_n(const float *x, ptrdiff_t xs_c, ptrdiff_t xs_h,
                       const float *wt, ptrdiff_t c_in, ptrdiff_t c_out_t,
                       ptrdiff_t kh, ptrdiff_t kw,
                       float *dst, ptrdiff_t dst_c, const int nco)
{
    sornet_v16 s[SORNET_OB];
#pragma GCC unroll 8
    for (int c = 0; c < nco; c++)
        s[c] = (sornet_v16){0};
    for (ptrdiff_t ki = 0; ki < kh; ki++) {
        for (ptrdiff_t kj = 0; kj < kw; kj++) {
            const float *xk = x + ki * xs_h + kj;
            const float *wk = wt + (ki * kw + kj) * c_in * c_out_t;
            for (ptrdiff_t ci = 0; ci < c_in; ci++) {
                sornet_v16 xv = sornet_load(xk + ci * xs_c);
                const float *w = wk + ci * c_out_t;
#pragma GCC unroll 8
                for (int c = 0; c < nco; c++)
                    s[c] += w[c] * xv;
            }
        }
    }
#pragma GCC unroll 8
    for (int c = 0; c < nco; c++)
        sornet_store(dst + c * dst_c, s[c]);
}

static inline void sornet_fwd_tile(const float *x, ptrdiff_t xs_c, ptrdiff_t xs_h,
                                   const float *wt, ptrdiff_t c_in, ptrdiff_t c_out_t,
                                   ptrdiff_t kh, ptrdiff_t kw,
                                   float *dst, ptrdiff_t dst_c, ptrdiff_t nco)
{
    switch (nco) {
#define SORNET_CASE(K) case K: sornet_fwd_tile_n(x, xs_c, xs_h, wt, c_in, c_out_t, kh, kw, dst, dst_c, K); break;
    SORNET_CASE(1) SORNET_CASE(2) SORNET_CASE(3) SORNET_CASE(4)
    SORNET_CASE(5) SORNET_CASE(6) SORNET_CASE(7) SORNET_CASE(8)
#undef SORNET_CASE
    default: break;
    }
}

/* Ragged tile (fewer than LANES columns); same summation order. */
static inline void sornet_fwd_tile_ragged(const float *x, ptrdiff_t xs_c, ptrdiff_t xs_h,
                                          const float *wt, ptrdiff_t c_in, ptrdiff_t c_out_t,
                                          ptrdiff_t kh, ptrdiff_t kw,
                                          ptrdiff_t nco, ptrdiff_t nlanes,
                                          float *dst, ptrdiff_t dst_c)
{
    float s[SORNET_OB][SORNET_LANES] = {{0}};
    for (ptrdiff_t ki = 0; ki < kh; ki++)
        for (ptrdiff_t kj = 0; kj < kw; kj++)
            for (ptrdiff_t ci = 0; ci < c_in; ci++) {
                const float *xv = x + ci * xs_c + ki * xs_h + kj;
                const float *w = wt + ((ki * kw + kj) * c_in + ci) * c_out_t;
                for (ptrdiff_t c = 0; c < nco; c++)
                    for (ptrdiff_t l = 0; l < nlanes; l++)
                        s[c][l] += w[c] * xv[l];
            }
    for (ptrdiff_t c = 0; c < nco; c++)
        for (ptrdiff_t l = 0; l < nlanes; l++)
            dst[c * dst_c + l] = s[c][l];
}

/* Accumulate dy planes of two output channels against one input plane into
 * two 3x3 kernel gradients.  acc0/acc1 are 9 x LANES partial sums; lane l
 * collects columns j = l (mod LANES), rows in increasing order. */
static inline void sornet_dw_plane3x2(const float *dy0, const float *dy1,
                                      const float *xp, ptrdiff_t xs_h,
                                      ptrdiff_t height, ptrdiff_t width,
                                      float *acc0, float *acc1)
{
    sornet_v16 a[9], b[9];
    for (int k = 0; k < 9; k++) {
        a[k] = sornet_load(acc0 + k * SORNET_LANES);
        b[k] = sornet_load(acc1 + k * SORNET_LANES);
    }
    ptrdiff_t full = width - width % SORNET_LANES;
    for (ptrdiff_t h = 0; h < height; h++) {
        const float *d0row = dy0 + h * width;
        const float *d1row = dy1 + h * width;
        const float *xrow = xp + h * xs_h;
        for (ptrdiff_t j0 = 0; j0 < full; j0 += SORNET_LANES) {
            sornet_v16 d0 = sornet_load(d0row + j0);
            sornet_v16 d1 = sornet_load(d1row + j0);
#pragma GCC unroll 3
            for (int ki = 0; ki < 3; ki++) {
                const float *xr = xrow + ki * xs_h + j0;
                sornet_v16 x0 = sornet_load(xr);
                sornet_v16 x1 = sornet_load(xr + 1);
                sornet_v16 x2 = sornet_load(xr + 2);
                a[ki * 3 + 0] += d0 * x0; b[ki * 3 + 0] += d1 * x0;
                a[ki * 3 + 1] += d0 * x1; b[ki * 3 + 1] += d1 * x1;
                a[ki * 3 + 2] += d0 * x2; b[ki * 3 + 2] += d1 * x2;
            }
        }
        if (full < width) {
            for (int k = 0; k < 9; k++) {
                sornet_store(acc0 + k * SORNET_LANES, a[k]);
                sornet_store(acc1 + k * SORNET_LANES, b[k]);
            }
            for (ptrdiff_t j = full; j < width; j++) {
                ptrdiff_t l = j - full;
                float e0 = d0row[j], e1 = d1row[j];
                for (int ki = 0; ki < 3; ki++)
                    for (int kj = 0; kj < 3; kj++) {
                        float xv = xrow[ki * xs_h + kj + j];
                        acc0[(ki * 3 + kj) * SORNET_LANES + l] += e0 * xv;
                        acc1[(ki * 3 + kj) * SORNET_LANES + l] += e1 * xv;
                    }
            }
            for (int k = 0; k < 9; k++) {
                a[k] = sornet_load(acc0 + k * SORNET_LANES);
                b[k] = sornet_load(acc1 + k * SORNET_LANES);
            }
        }
    }
    for (int k = 0; k < 9; k++) {
        sornet_store(acc0 + k * SORNET_LANES, a[k]);
        sornet_store(acc1 + k * SORNET_LANES, b[k]);
    }
}

static inline void sornet_dw_plane(const float *dy, const float *xp, ptrdiff_t xs_h,
                                   ptrdiff_t kh, ptrdiff_t kw,
                                   ptrdiff_t height, ptrdiff_t width, float *acc)
{
    for (ptrdiff_t h = 0; h < height; h++) {
        const float *drow = dy + h * width;
        const float *xrow = xp + h * xs_h;
        for (ptrdiff_t j = 0; j < width; j++) {
            ptrdiff_t l = j % SORNET_LANES;
            float d = drow[j];
            for (ptrdiff_t ki = 0; ki < kh; ki++)
                for (ptrdiff_t kj = 0; kj < kw; kj++)
                    acc[(ki * kw + kj) * SORNET_LANES + l] += d * xrow[ki * xs_h + kj + j];
        }
    }
}

#endif
