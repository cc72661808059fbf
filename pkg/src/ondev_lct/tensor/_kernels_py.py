"""Pure-numpy kernels (channels-last), the fallback for the compiled core.

Same signatures and semantics as the compiled ``_kernels`` extension. Padding
is implicit: ``pad_top``/``pad_left`` zero rows/columns sit before the input
and whatever the output extent needs sits after it.
"""

import numpy as np
from scipy.special import erf

BACKEND = "python"
_SQRT1_2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def _padded(x, kh, kw, stride, pad_top, pad_left, ho, wo):
    n, h, w, c = x.shape
    hp = (ho - 1) * stride + kh
    wp = (wo - 1) * stride + kw
    pad_bottom = max(hp - h - pad_top, 0)
    pad_right = max(wp - w - pad_left, 0)
    if pad_top == pad_left == pad_bottom == pad_right == 0:
        return x
    return np.pad(x, ((0, 0), (pad_top, pad_bottom), (pad_left, pad_right), (0, 0)))


def im2col(x, kh, kw, stride, pad_top, pad_left, ho, wo):
    """Gather patches into ``[N, Ho, Wo, kh, kw, C]``."""
    n, _, _, c = x.shape
    xp = _padded(x, kh, kw, stride, pad_top, pad_left, ho, wo)
    out = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
    he = (ho - 1) * stride + 1
    we = (wo - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, :, i, j, :] = xp[:, i:i + he:stride, j:j + we:stride, :]
    return out


def col2im(cols, h, w, stride, pad_top, pad_left):
    """Adjoint of :func:`im2col`: scatter-add patches back to ``[N, H, W, C]``."""
    n, ho, wo, kh, kw, c = cols.shape
    hp = max((ho - 1) * stride + kh, h + pad_top)
    wp = max((wo - 1) * stride + kw, w + pad_left)
    xp = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    he = (ho - 1) * stride + 1
    we = (wo - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + he:stride, j:j + we:stride, :] += cols[:, :, :, i, j, :]
    return np.ascontiguousarray(xp[:, pad_top:pad_top + h, pad_left:pad_left + w, :])


def depthwise_forward(x, w, stride, pad_top, pad_left, ho, wo):
    n, _, _, c = x.shape
    kh, kw, _ = w.shape
    xp = _padded(x, kh, kw, stride, pad_top, pad_left, ho, wo)
    out = np.zeros((n, ho, wo, c), dtype=x.dtype)
    he = (ho - 1) * stride + 1
    we = (wo - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + he:stride, j:j + we:stride, :] * w[i, j]
    return out


def depthwise_backward(x, w, gy, stride, pad_top, pad_left):
    """Return ``(grad_x, grad_w)`` for :func:`depthwise_forward`."""
    n, h, wd, c = x.shape
    kh, kw, _ = w.shape
    _, ho, wo, _ = gy.shape
    xp = _padded(x, kh, kw, stride, pad_top, pad_left, ho, wo)
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    he = (ho - 1) * stride + 1
    we = (wo - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            sl = (slice(None), slice(i, i + he, stride), slice(j, j + we, stride), slice(None))
            gw[i, j] = np.einsum("nhwc,nhwc->c", xp[sl], gy)
            gxp[sl] += gy * w[i, j]
    gx = np.ascontiguousarray(gxp[:, pad_top:pad_top + h, pad_left:pad_left + wd, :])
    return gx, gw


# -- fused normalization / activation kernels -------------------------------
# Inputs are 2-d ``[M, C]`` views; statistics are returned in the input dtype.

def bn_train_forward(x, gamma, beta, eps):
    """Batch statistics over rows; returns ``(y, xhat, mean, var, inv_std)``."""
    mean = x.mean(axis=0)
    xc = x - mean
    var = np.mean(xc * xc, axis=0)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * inv
    return xhat * gamma + beta, xhat, mean, var, inv


def bn_backward(g, xhat, gamma, inv):
    m = g.shape[0]
    ggamma = np.einsum("mc,mc->c", g, xhat)
    gbeta = g.sum(axis=0)
    gx = (gamma * inv / m) * (m * g - gbeta - xhat * ggamma)
    return gx, ggamma, gbeta


def ln_forward(x, gamma, beta, eps):
    """Per-row statistics; returns ``(y, xhat, inv_std[M])``."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * inv
    return xhat * gamma + beta, xhat, inv.reshape(-1)


def ln_backward(g, xhat, gamma, inv):
    ggamma = np.einsum("mc,mc->c", g, xhat)
    gbeta = g.sum(axis=0)
    gh = g * gamma
    gx = inv[:, None] * (gh - gh.mean(axis=1, keepdims=True) - xhat * (gh * xhat).mean(axis=1, keepdims=True))
    return gx, ggamma, gbeta


def gelu_forward(x):
    """Exact GELU; returns ``(y, cdf)`` with ``cdf = Phi(x)``."""
    cdf = (0.5 * (1.0 + erf(x * _SQRT1_2))).astype(x.dtype, copy=False)
    return x * cdf, cdf


def gelu_backward(g, x, cdf):
    pdf = (np.exp(-0.5 * x * x) * _INV_SQRT_2PI).astype(x.dtype, copy=False)
    return g * (cdf + x * pdf)
