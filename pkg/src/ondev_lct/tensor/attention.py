"""Multi-head self-attention assembled from differentiable primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ConfigError, DimensionError
from . import ops
from .tensor import Tensor


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


def _split_heads(x: Tensor, n: int, t: int, heads: int, dh: int) -> Tensor:
    return ops.transpose(ops.reshape(x, (n, t, heads, dh)), (0, 2, 1, 3))


def mhsa(z: Tensor, params: AttentionParams, heads: int, dropout_p: float = 0.0,
         train: bool = False, rng=None) -> Tensor:
    """Scaled dot-product attention over ``heads`` parallel heads.

    ``z`` is ``[N, T, D]``; each head sees ``D / heads`` features. Dropout,
    when active, hits the attention weights only.
    """
    if z.ndim != 3:
        raise DimensionError(f"mhsa expects [N, T, D], got {z.shape}")
    n, t, d = z.shape
    if heads <= 0 or d % heads:
        raise ConfigError(f"embedding dim {d} is not divisible by {heads} heads")
    dh = d // heads
    q = _split_heads(ops.linear(z, params.wq, params.bq), n, t, heads, dh)
    k = _split_heads(ops.linear(z, params.wk, params.bk), n, t, heads, dh)
    v = _split_heads(ops.linear(z, params.wv, params.bv), n, t, heads, dh)
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = ops.softmax(scores, axis=-1)
    attn = ops.dropout(attn, dropout_p, train, rng)
    ctx = ops.matmul(attn, v)
    ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (n, t, d))
    return ops.linear(ctx, params.wo, params.bo)
