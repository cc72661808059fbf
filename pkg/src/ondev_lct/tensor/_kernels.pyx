# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: channels-last convolutions, batch/layer norm, GELU.

Mirrors ``_kernels_py``; padding is implicit (out-of-range taps read as zero),
so no padded copy of the input is ever made. Reductions accumulate in double.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"

ctypedef fused real:
    float
    double


def _im2col(const real[:, :, :, ::1] x, real[:, :, :, :, :, ::1] out,
            int stride, int pad_top, int pad_left):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = out.shape[1], wo = out.shape[2], kh = out.shape[3], kw = out.shape[4]
    cdef Py_ssize_t b, oh, ow, i, j, k, ih, iw
    with nogil:
        for b in range(n):
            for oh in range(ho):
                for ow in range(wo):
                    for i in range(kh):
                        ih = oh * stride + i - pad_top
                        for j in range(kw):
                            iw = ow * stride + j - pad_left
                            if ih < 0 or ih >= h or iw < 0 or iw >= w:
                                for k in range(c):
                                    out[b, oh, ow, i, j, k] = 0
                            else:
                                for k in range(c):
                                    out[b, oh, ow, i, j, k] = x[b, ih, iw, k]


def _col2im(const real[:, :, :, :, :, ::1] cols, real[:, :, :, ::1] out,
            int stride, int pad_top, int pad_left):
    cdef Py_ssize_t n = out.shape[0], h = out.shape[1], w = out.shape[2], c = out.shape[3]
    cdef Py_ssize_t ho = cols.shape[1], wo = cols.shape[2], kh = cols.shape[3], kw = cols.shape[4]
    cdef Py_ssize_t b, oh, ow, i, j, k, ih, iw
    with nogil:
        for b in range(n):
            for oh in range(ho):
                for ow in range(wo):
                    for i in range(kh):
                        ih = oh * stride + i - pad_top
                        if ih < 0 or ih >= h:
                            continue
                        for j in range(kw):
                            iw = ow * stride + j - pad_left
                            if iw < 0 or iw >= w:
                                continue
                            for k in range(c):
                                out[b, ih, iw, k] += cols[b, oh, ow, i, j, k]


def _dw_forward(const real[:, :, :, ::1] x, const real[:, :, ::1] wt, real[:, :, :, ::1] out,
                int stride, int pad_top, int pad_left):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = out.shape[1], wo = out.shape[2], kh = wt.shape[0], kw = wt.shape[1]
    cdef Py_ssize_t b, oh, ow, i, j, k, ih, iw
    with nogil:
        for b in range(n):
            for oh in range(ho):
                for ow in range(wo):
                    for i in range(kh):
                        ih = oh * stride + i - pad_top
                        if ih < 0 or ih >= h:
                            continue
                        for j in range(kw):
                            iw = ow * stride + j - pad_left
                            if iw < 0 or iw >= w:
                                continue
                            for k in range(c):
                                out[b, oh, ow, k] += x[b, ih, iw, k] * wt[i, j, k]


def _dw_backward(const real[:, :, :, ::1] x, const real[:, :, ::1] wt, const real[:, :, :, ::1] gy,
                 real[:, :, :, ::1] gx, real[:, :, ::1] gw,
                 int stride, int pad_top, int pad_left):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = gy.shape[1], wo = gy.shape[2], kh = wt.shape[0], kw = wt.shape[1]
    cdef Py_ssize_t b, oh, ow, i, j, k, ih, iw
    cdef real g
    with nogil:
        for b in range(n):
            for oh in range(ho):
                for ow in range(wo):
                    for i in range(kh):
                        ih = oh * stride + i - pad_top
                        if ih < 0 or ih >= h:
                            continue
                        for j in range(kw):
                            iw = ow * stride + j - pad_left
                            if iw < 0 or iw >= w:
                                continue
                            for k in range(c):
                                g = gy[b, oh, ow, k]
                                gx[b, ih, iw, k] += g * wt[i, j, k]
                                gw[i, j, k] += g * x[b, ih, iw, k]


def im2col(x, int kh, int kw, int stride, int pad_top, int pad_left, int ho, int wo):
    x = np.ascontiguousarray(x)
    out = np.empty((x.shape[0], ho, wo, kh, kw, x.shape[3]), dtype=x.dtype)
    _im2col(x, out, stride, pad_top, pad_left)
    return out


def col2im(cols, int h, int w, int stride, int pad_top, int pad_left):
    cols = np.ascontiguousarray(cols)
    out = np.zeros((cols.shape[0], h, w, cols.shape[5]), dtype=cols.dtype)
    _col2im(cols, out, stride, pad_top, pad_left)
    return out


def depthwise_forward(x, w, int stride, int pad_top, int pad_left, int ho, int wo):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    out = np.zeros((x.shape[0], ho, wo, x.shape[3]), dtype=x.dtype)
    _dw_forward(x, w, out, stride, pad_top, pad_left)
    return out


def depthwise_backward(x, w, gy, int stride, int pad_top, int pad_left):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    gy = np.ascontiguousarray(gy, dtype=x.dtype)
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    _dw_backward(x, w, gy, gx, gw, stride, pad_top, pad_left)
    return gx, gw


# -- fused normalization / activation kernels -------------------------------

from libc.math cimport sqrt, erf, erff

cdef double SQRT1_2 = 0.7071067811865476
cdef double INV_SQRT_2PI = 0.3989422804014327


def _bn_train_forward(const real[:, ::1] x, const real[::1] gamma, const real[::1] beta, double eps,
                      real[:, ::1] y, real[:, ::1] xhat, real[::1] mean, real[::1] var, real[::1] inv):
    cdef Py_ssize_t m = x.shape[0], c = x.shape[1], i, k
    cdef double[::1] acc = np.zeros(c)
    cdef double[::1] acc2 = np.zeros(c)
    cdef double d
    with nogil:
        for i in range(m):
            for k in range(c):
                acc[k] += x[i, k]
        for k in range(c):
            acc[k] /= m
        for i in range(m):
            for k in range(c):
                d = x[i, k] - acc[k]
                acc2[k] += d * d
        for k in range(c):
            mean[k] = <real>acc[k]
            var[k] = <real>(acc2[k] / m)
            acc2[k] = 1.0 / sqrt(acc2[k] / m + eps)
            inv[k] = <real>acc2[k]
        for i in range(m):
            for k in range(c):
                d = (x[i, k] - acc[k]) * acc2[k]
                xhat[i, k] = <real>d
                y[i, k] = <real>(d * gamma[k] + beta[k])


def _bn_backward(const real[:, ::1] g, const real[:, ::1] xhat, const real[::1] gamma, const real[::1] inv,
                 real[:, ::1] gx, real[::1] ggamma, real[::1] gbeta):
    cdef Py_ssize_t m = g.shape[0], c = g.shape[1], i, k
    cdef double[::1] sg = np.zeros(c)
    cdef double[::1] sgx = np.zeros(c)
    cdef double[::1] coef = np.empty(c)
    with nogil:
        for i in range(m):
            for k in range(c):
                sg[k] += g[i, k]
                sgx[k] += g[i, k] * xhat[i, k]
        for k in range(c):
            ggamma[k] = <real>sgx[k]
            gbeta[k] = <real>sg[k]
            coef[k] = gamma[k] * inv[k] / m
            sg[k] /= m
            sgx[k] /= m
        for i in range(m):
            for k in range(c):
                gx[i, k] = <real>(coef[k] * m * (g[i, k] - sg[k] - xhat[i, k] * sgx[k]))


def _ln_forward(const real[:, ::1] x, const real[::1] gamma, const real[::1] beta, double eps,
                real[:, ::1] y, real[:, ::1] xhat, real[::1] inv):
    cdef Py_ssize_t m = x.shape[0], c = x.shape[1], i, k
    cdef double mu, v, d, s
    with nogil:
        for i in range(m):
            mu = 0.0
            for k in range(c):
                mu += x[i, k]
            mu /= c
            v = 0.0
            for k in range(c):
                d = x[i, k] - mu
                v += d * d
            s = 1.0 / sqrt(v / c + eps)
            inv[i] = <real>s
            for k in range(c):
                d = (x[i, k] - mu) * s
                xhat[i, k] = <real>d
                y[i, k] = <real>(d * gamma[k] + beta[k])


def _ln_backward(const real[:, ::1] g, const real[:, ::1] xhat, const real[::1] gamma, const real[::1] inv,
                 real[:, ::1] gx, real[::1] ggamma, real[::1] gbeta):
    cdef Py_ssize_t m = g.shape[0], c = g.shape[1], i, k
    cdef double[::1] sgam = np.zeros(c)
    cdef double[::1] sbet = np.zeros(c)
    cdef double a, b, gh
    with nogil:
        for i in range(m):
            a = 0.0
            b = 0.0
            for k in range(c):
                gh = g[i, k] * gamma[k]
                a += gh
                b += gh * xhat[i, k]
                sgam[k] += g[i, k] * xhat[i, k]
                sbet[k] += g[i, k]
            a /= c
            b /= c
            for k in range(c):
                gx[i, k] = <real>(inv[i] * (g[i, k] * gamma[k] - a - xhat[i, k] * b))
        for k in range(c):
            ggamma[k] = <real>sgam[k]
            gbeta[k] = <real>sbet[k]


def _gelu_forward(const real[::1] x, real[::1] y, real[::1] cdf):
    cdef Py_ssize_t n = x.shape[0], i
    cdef double p
    with nogil:
        if real is float:
            for i in range(n):
                p = 0.5 * (1.0 + erff(x[i] * <float>SQRT1_2))
                cdf[i] = <real>p
                y[i] = <real>(x[i] * <real>p)
        else:
            for i in range(n):
                p = 0.5 * (1.0 + erf(x[i] * SQRT1_2))
                cdf[i] = p
                y[i] = x[i] * p


def bn_train_forward(x, gamma, beta, double eps):
    x = np.ascontiguousarray(x)
    c = x.shape[1]
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    mean = np.empty(c, dtype=x.dtype)
    var = np.empty(c, dtype=x.dtype)
    inv = np.empty(c, dtype=x.dtype)
    _bn_train_forward(x, np.ascontiguousarray(gamma, dtype=x.dtype), np.ascontiguousarray(beta, dtype=x.dtype),
                      eps, y, xhat, mean, var, inv)
    return y, xhat, mean, var, inv


def bn_backward(g, xhat, gamma, inv):
    g = np.ascontiguousarray(g, dtype=xhat.dtype)
    gx = np.empty_like(g)
    ggamma = np.empty(g.shape[1], dtype=g.dtype)
    gbeta = np.empty(g.shape[1], dtype=g.dtype)
    _bn_backward(g, xhat, np.ascontiguousarray(gamma, dtype=g.dtype), inv, gx, ggamma, gbeta)
    return gx, ggamma, gbeta


def ln_forward(x, gamma, beta, double eps):
    x = np.ascontiguousarray(x)
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    inv = np.empty(x.shape[0], dtype=x.dtype)
    _ln_forward(x, np.ascontiguousarray(gamma, dtype=x.dtype), np.ascontiguousarray(beta, dtype=x.dtype),
                eps, y, xhat, inv)
    return y, xhat, inv


def ln_backward(g, xhat, gamma, inv):
    g = np.ascontiguousarray(g, dtype=xhat.dtype)
    gx = np.empty_like(g)
    ggamma = np.empty(g.shape[1], dtype=g.dtype)
    gbeta = np.empty(g.shape[1], dtype=g.dtype)
    _ln_backward(g, xhat, np.ascontiguousarray(gamma, dtype=g.dtype), inv, gx, ggamma, gbeta)
    return gx, ggamma, gbeta


def gelu_forward(x):
    x = np.ascontiguousarray(x)
    y = np.empty_like(x)
    cdf = np.empty_like(x)
    _gelu_forward(x.reshape(-1), y.reshape(-1), cdf.reshape(-1))
    return y, cdf


def gelu_backward(g, x, cdf):
    # numpy's vectorized exp outruns a scalar libm loop here
    g = np.ascontiguousarray(g, dtype=x.dtype)
    pdf = np.exp(np.multiply(x, x, dtype=x.dtype) * x.dtype.type(-0.5))
    pdf *= x.dtype.type(INV_SQRT_2PI)
    pdf *= x
    pdf += cdf
    pdf *= g
    return pdf
