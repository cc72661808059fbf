"""Differentiable primitives needed by the LCT architecture.

All image tensors are channels-last ``[N, H, W, C]``. Each op computes its
forward value with numpy (or the compiled kernels) and registers a closure
for the vector-Jacobian product.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError, DimensionError
from . import kernels
from .rng import Rng
from .tensor import Tensor, as_tensor, make_result

# --------------------------------------------------------------------------
# MAC tracing: every op that multiplies-and-accumulates reports its count
# from the operand shapes it actually saw.
# --------------------------------------------------------------------------

_mac_log: list | None = None


@contextlib.contextmanager
def trace_macs():
    """Collect ``(op, macs)`` records for every MAC-bearing op executed."""
    global _mac_log
    prev, _mac_log = _mac_log, []
    log = _mac_log
    try:
        yield log
    finally:
        _mac_log = prev


def _record(op: str, macs: int) -> None:
    if _mac_log is not None:
        _mac_log.append((op, int(macs)))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise and structural ops
# --------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = as_tensor(b, a.dtype)
    out = a.data + b.data.astype(a.dtype, copy=False)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_result(out, (a, b), backward, "add")


def mul(a: Tensor, b) -> Tensor:
    b = as_tensor(b, a.dtype)
    ad, bd = a.data, b.data.astype(a.dtype, copy=False)

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make_result(ad * bd, (a, b), backward, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        return (g * s,)

    return make_result(a.data * s, (a,), backward, "scale")


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape, dtype = a.shape, a.dtype

    def backward(g):
        return (np.broadcast_to(g, shape).astype(dtype),)

    return make_result(np.asarray(a.data.sum(), dtype=dtype), (a,), backward, "sum")


def mean(a: Tensor) -> Tensor:
    n = a.size
    shape, dtype = a.shape, a.dtype

    def backward(g):
        return (np.full(shape, float(g) / n, dtype=dtype),)

    return make_result(np.asarray(a.data.mean(), dtype=dtype), (a,), backward, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape

    def backward(g):
        return (g.reshape(src),)

    return make_result(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return make_result(np.ascontiguousarray(a.data.transpose(axes)), (a,), backward, "transpose")


def take(a: Tensor, index, axis: int) -> Tensor:
    """Gather along ``axis`` with an integer index array (a permutation in our use)."""
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, (slice(None),) * (axis % len(shape)) + (index,), g)
        return (gx,)

    return make_result(np.take(a.data, index, axis=axis), (a,), backward, "take")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return make_result(a.data * mask, (a,), backward, "relu")


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF written via erf."""
    x = a.data
    y, cdf = kernels.gelu_forward(x)

    def backward(g):
        return (kernels.gelu_backward(g, x, cdf),)

    return make_result(y, (a,), backward, "gelu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (a,), backward, "softmax")


def dropout(a: Tensor, p: float, train: bool, rng: Rng | np.random.Generator | None) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale survivors by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ArgumentError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ArgumentError("train-mode dropout needs a random stream")
    gen = rng.gen if isinstance(rng, Rng) else rng
    keep = gen.random(a.shape, dtype=np.float32) >= np.float32(p)
    m = keep.astype(a.dtype) * (1.0 / (1.0 - p))

    def backward(g):
        return (g * m,)

    return make_result(a.data * m, (a,), backward, "dropout")


# --------------------------------------------------------------------------
# dense products
# --------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched ``a @ b`` over the last two axes; leading axes must match."""
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {ad.shape} @ {bd.shape}")
    out = ad @ bd
    _record("matmul", out.size * ad.shape[-1])

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_result(out, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x[..., Din] @ w[Din, Dout] + b``."""
    xd, wd = x.data, w.data
    if xd.shape[-1] != wd.shape[0]:
        raise DimensionError(f"linear expects last axis {wd.shape[0]}, got {xd.shape[-1]}")
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, wd.shape[0])
    y = x2 @ wd
    if b is not None:
        y += b.data
    _record("linear", x2.shape[0] * wd.shape[0] * wd.shape[1])

    def backward(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return make_result(y.reshape(lead + (wd.shape[1],)), parents, backward, "linear")


def pointwise_conv2d(x: Tensor, w: Tensor) -> Tensor:
    """1x1 convolution; a per-position linear map with ``w[Cin, Cout]``."""
    if x.ndim != 4:
        raise DimensionError(f"pointwise_conv2d expects NHWC input, got shape {x.shape}")
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"pointwise_conv2d: input has {x.shape[-1]} channels, kernel expects {w.shape[0]}")
    return linear(x, w)


# --------------------------------------------------------------------------
# spatial convolutions
# --------------------------------------------------------------------------

def conv_output_geometry(h: int, w: int, kh: int, kw: int, stride: int, padding: str):
    """Return ``(Ho, Wo, pad_top, pad_left)``.

    'same' pads so that ``Ho = ceil(H / stride)``; odd total padding puts the
    extra row/column at the bottom/right.
    """
    if not isinstance(stride, (int, np.integer)) or stride <= 0:
        raise ArgumentError(f"stride must be a positive int, got {stride!r}")
    if padding == "same":
        ho, wo = -(-h // stride), -(-w // stride)
        pad_h = max((ho - 1) * stride + kh - h, 0)
        pad_w = max((wo - 1) * stride + kw - w, 0)
        return ho, wo, pad_h // 2, pad_w // 2
    if padding == "valid":
        if h < kh or w < kw:
            raise DimensionError(f"valid convolution needs input >= kernel, got {h}x{w} vs {kh}x{kw}")
        return (h - kh) // stride + 1, (w - kw) // stride + 1, 0, 0
    raise ArgumentError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Dense convolution, ``x[N,H,W,Cin] * w[kh,kw,Cin,Cout]``, no bias."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}")
    n, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if cin != wcin:
        raise DimensionError(f"conv2d: input has {cin} channels, kernel expects {wcin}")
    ho, wo, pt, pl = conv_output_geometry(h, wd, kh, kw, stride, padding)
    cols = kernels.im2col(x.data, kh, kw, stride, pt, pl, ho, wo)
    cols2 = cols.reshape(n * ho * wo, kh * kw * cin)
    w2 = w.data.reshape(kh * kw * cin, cout)
    y = (cols2 @ w2).reshape(n, ho, wo, cout)
    _record("conv2d", n * ho * wo * kh * kw * cin * cout)

    def backward(g):
        g2 = g.reshape(n * ho * wo, cout)
        gw = (cols2.T @ g2).reshape(w.shape)
        gcols = (g2 @ w2.T).reshape(n, ho, wo, kh, kw, cin)
        gx = kernels.col2im(gcols, h, wd, stride, pt, pl)
        return gx, gw

    return make_result(y, (x, w), backward, "conv2d")


def depthwise_conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """One ``kh x kw`` filter per channel, ``w[kh, kw, C]``, no bias."""
    if x.ndim != 4 or w.ndim != 3:
        raise DimensionError(f"depthwise_conv2d expects NHWC input and [kh,kw,C] kernel, got {x.shape}, {w.shape}")
    n, h, wd, c = x.shape
    kh, kw, wc = w.shape
    if c != wc:
        raise DimensionError(f"depthwise_conv2d: input has {c} channels, kernel has {wc}")
    ho, wo, pt, pl = conv_output_geometry(h, wd, kh, kw, stride, padding)
    xd, wdat = x.data, w.data
    y = kernels.depthwise_forward(xd, wdat, stride, pt, pl, ho, wo)
    _record("depthwise_conv2d", n * ho * wo * kh * kw * c)

    def backward(g):
        return kernels.depthwise_backward(xd, wdat, np.ascontiguousarray(g), stride, pt, pl)

    return make_result(y, (x, w), backward, "depthwise_conv2d")


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------

@dataclass
class BNState:
    """Learnable affine plus running statistics for one batch-norm layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = 0.9, eps: float = 1e-5, name: str = "bn"):
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True, dtype=dtype, name=f"{name}.gamma"),
            beta=Tensor(np.zeros(channels), requires_grad=True, dtype=dtype, name=f"{name}.beta"),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )


def batchnorm(x: Tensor, state: BNState, train: bool) -> Tensor:
    """Per-channel normalization over every axis but the last.

    Train mode uses (biased) batch statistics and folds them into the
    running estimates; eval mode uses the running estimates.
    """
    c = x.shape[-1]
    if state.gamma.shape != (c,):
        raise DimensionError(f"batchnorm: input has {c} channels, state has {state.gamma.shape[0]}")
    xd = x.data
    gamma, beta = state.gamma.data, state.beta.data
    axes = tuple(range(xd.ndim - 1))
    if not train:
        rmean = state.running_mean
        inv = (1.0 / np.sqrt(state.running_var + state.eps)).astype(xd.dtype)
        scale_ = gamma * inv
        shift = beta - rmean * scale_
        y = xd * scale_ + shift

        def backward_eval(g):
            return g * scale_, (g * (xd - rmean) * inv).sum(axis=axes), g.sum(axis=axes)

        return make_result(y, (x, state.gamma, state.beta), backward_eval, "batchnorm")

    x2 = xd.reshape(-1, c)
    y2, xhat2, mu, var, inv = kernels.bn_train_forward(x2, gamma, beta, state.eps)
    mom = state.momentum
    state.running_mean = (mom * state.running_mean + (1.0 - mom) * mu).astype(xd.dtype)
    state.running_var = (mom * state.running_var + (1.0 - mom) * var).astype(xd.dtype)

    def backward(g):
        gx, ggamma, gbeta = kernels.bn_backward(g.reshape(-1, c), xhat2, gamma, inv)
        return gx.reshape(xd.shape), ggamma, gbeta

    return make_result(y2.reshape(xd.shape), (x, state.gamma, state.beta), backward, "batchnorm")


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each vector along the last axis, then apply ``gamma, beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layernorm: last axis is {d}, affine params are {gamma.shape}/{beta.shape}")
    xd = x.data
    gd = gamma.data
    y2, xhat2, inv = kernels.ln_forward(xd.reshape(-1, d), gd, beta.data, eps)

    def backward(g):
        gx, ggamma, gbeta = kernels.ln_backward(g.reshape(-1, d), xhat2, gd, inv)
        return gx.reshape(xd.shape), ggamma, gbeta

    return make_result(y2.reshape(xd.shape), (x, gamma, beta), backward, "layernorm")


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def label_smoothed_ce(logits: Tensor, labels, eps: float = 0.0) -> Tensor:
    """Mean cross-entropy against ``(1 - eps) * onehot + eps / K`` targets."""
    if not 0.0 <= eps < 1.0:
        raise ArgumentError(f"label smoothing must lie in [0, 1), got {eps}")
    if logits.ndim != 2:
        raise DimensionError(f"logits must be [N, K], got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ArgumentError(f"labels must lie in [0, {k})")
    labels = labels.astype(np.intp)
    q = np.full((n, k), eps / k, dtype=logits.dtype)
    q[np.arange(n), labels] += 1.0 - eps
    lp = log_softmax(logits.data)
    loss = -(q * lp).sum() / n

    def backward(g):
        return ((np.exp(lp) - q) * (float(g) / n),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "label_smoothed_ce")
