"""The LCT network: convolutional tokenizer, transformer encoders, SeqPool head."""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np
from scipy.stats import truncnorm

from ..errors import DimensionError
from ..tensor import ops
from ..tensor.attention import AttentionParams, mhsa
from ..tensor.ops import BNState
from ..tensor.rng import Rng
from ..tensor.tensor import DTYPES, Tensor
from .config import LCTConfig


def _kaiming_uniform(gen: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return gen.uniform(-bound, bound, size=shape)


def _trunc_normal(gen: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape, random_state=gen)


def seqpool(z: Tensor, gamma: Tensor, beta: Tensor, w: Tensor, b: Tensor, eps: float = 1e-5,
            return_weights: bool = False):
    """Attention-weighted pooling over the token axis.

    Scores come from a linear map of the layer-normalized tokens; their
    softmax over ``T`` weights the encoder output ``z`` itself. Returns
    ``[N, D]`` (and the ``[N, T]`` weights if requested).
    """
    if z.ndim != 3:
        raise DimensionError(f"seqpool expects [N, T, D], got {z.shape}")
    n, t, d = z.shape
    if w.shape != (d, 1):
        raise DimensionError(f"seqpool weight must be [{d}, 1], got {w.shape}")
    scores = ops.linear(ops.layernorm(z, gamma, beta, eps), w, b)
    weights = ops.softmax(ops.reshape(scores, (n, 1, t)), axis=-1)
    pooled = ops.reshape(ops.matmul(weights, z), (n, d))
    if return_weights:
        return pooled, weights.data.reshape(n, t)
    return pooled


class LCTModel:
    """An instantiated LCT network with an ordered parameter registry.

    ``params`` maps canonical names to trainable tensors in construction
    order; ``bn`` maps batch-norm layer names to their :class:`BNState`. The
    order of both is fixed by the config alone.
    """

    def __init__(self, config: LCTConfig, rng: Rng | int = 0):
        self.config = config
        self.dtype = np.dtype(DTYPES[config.dtype])
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.bn: "OrderedDict[str, BNState]" = OrderedDict()
        self.training = False
        self.relu_taps: list | None = None
        rng = rng if isinstance(rng, Rng) else Rng(int(rng))
        self.dropout_rng = rng.child("dropout")
        self._build(rng.child("init").gen)

    # -- construction --------------------------------------------------
    def _param(self, name: str, value) -> Tensor:
        t = Tensor(np.asarray(value), requires_grad=True, dtype=self.dtype, name=name)
        self.params[name] = t
        return t

    def _bn(self, name: str, channels: int) -> BNState:
        cfg = self.config
        st = BNState.create(channels, self.dtype, cfg.bn_momentum, cfg.bn_eps, name)
        self.params[f"{name}.gamma"] = st.gamma
        self.params[f"{name}.beta"] = st.beta
        self.bn[name] = st
        return st

    def _ln(self, name: str, dim: int) -> None:
        self._param(f"{name}.gamma", np.ones(dim))
        self._param(f"{name}.beta", np.zeros(dim))

    def _fc(self, name: str, din: int, dout: int, gen) -> None:
        self._param(f"{name}.w", _trunc_normal(gen, (din, dout)))
        self._param(f"{name}.b", np.zeros(dout))

    def _build(self, gen: np.random.Generator) -> None:
        cfg = self.config
        cin = cfg.input_shape[2]
        sc, d, s = cfg.stem_channels, cfg.embed_dim, cfg.bottleneck_shrink
        for m in range(cfg.num_stem_convs):
            c_in = cin if m == 0 else sc
            self._param(f"stem.{m}.conv.w", _kaiming_uniform(gen, (3, 3, c_in, sc), 9 * c_in))
            self._bn(f"stem.{m}.bn", sc)
        self._param("tok.dw.w", _kaiming_uniform(gen, (3, 3, sc), 9))
        self._bn("tok.dw_bn", sc)
        self._param("tok.pw.w", _kaiming_uniform(gen, (sc, d), sc))
        self._bn("tok.pw_bn", d)
        for r in range(cfg.num_bottlenecks):
            p = f"bneck.{r}"
            self._param(f"{p}.shrink.w", _kaiming_uniform(gen, (d, s), d))
            self._bn(f"{p}.shrink_bn", s)
            self._param(f"{p}.dw.w", _kaiming_uniform(gen, (3, 3, s), 9))
            self._bn(f"{p}.dw_bn", s)
            self._param(f"{p}.pw.w", _kaiming_uniform(gen, (s, d), s))
            self._bn(f"{p}.pw_bn", d)
        for l in range(cfg.num_encoders):
            p = f"enc.{l}"
            self._ln(f"{p}.ln1", d)
            for proj in ("q", "k", "v", "o"):
                self._param(f"{p}.attn.w{proj}", _trunc_normal(gen, (d, d)))
                self._param(f"{p}.attn.b{proj}", np.zeros(d))
            self._ln(f"{p}.ln2", d)
            self._fc(f"{p}.mlp.fc1", d, cfg.mlp_hidden, gen)
            self._fc(f"{p}.mlp.fc2", cfg.mlp_hidden, d, gen)
        self._ln("seqpool.ln", d)
        self._fc("seqpool.fc", d, 1, gen)
        self._fc("head.fc", d, cfg.num_classes, gen)

    # -- modes ---------------------------------------------------------
    def train(self) -> "LCTModel":
        self.training = True
        return self

    def eval(self) -> "LCTModel":
        self.training = False
        return self

    def set_rng(self, rng: Rng) -> None:
        """Point train-mode dropout at a fresh stream."""
        self.dropout_rng = rng

    def named_parameters(self):
        return self.params.items()

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- forward -------------------------------------------------------
    def _relu(self, x: Tensor) -> Tensor:
        if self.relu_taps is not None:
            self.relu_taps.append(x.data)
        return ops.relu(x)

    def _bn_act(self, x: Tensor, name: str, relu: bool) -> Tensor:
        y = ops.batchnorm(x, self.bn[name], self.training)
        return self._relu(y) if relu else y

    def tokenize(self, x: Tensor) -> Tensor:
        """Image ``[N, H, W, C]`` -> token sequence ``[N, (H/4)(W/4), D]``."""
        cfg, P = self.config, self.params
        for m in range(cfg.num_stem_convs):
            x = ops.conv2d(x, P[f"stem.{m}.conv.w"], stride=2 if m == 0 else 1, padding="same")
            x = self._bn_act(x, f"stem.{m}.bn", relu=True)
        x = ops.depthwise_conv2d(x, P["tok.dw.w"], stride=2, padding="same")
        x = self._bn_act(x, "tok.dw_bn", relu=True)
        x = ops.pointwise_conv2d(x, P["tok.pw.w"])
        x = self._bn_act(x, "tok.pw_bn", relu=False)
        for r in range(cfg.num_bottlenecks):
            x = self.bottleneck(x, r)
        n, h, w, d = x.shape
        return ops.reshape(x, (n, h * w, d))

    def bottleneck(self, x: Tensor, r: int) -> Tensor:
        """Residual linear bottleneck ``r``: shrink, depthwise, expand, then add the input."""
        P, p = self.params, f"bneck.{r}"
        y = ops.pointwise_conv2d(x, P[f"{p}.shrink.w"])
        y = self._bn_act(y, f"{p}.shrink_bn", relu=True)
        y = ops.depthwise_conv2d(y, P[f"{p}.dw.w"], stride=1, padding="same")
        y = self._bn_act(y, f"{p}.dw_bn", relu=True)
        y = ops.pointwise_conv2d(y, P[f"{p}.pw.w"])
        y = self._bn_act(y, f"{p}.pw_bn", relu=False)
        return ops.add(x, y)

    def _attention(self, l: int) -> AttentionParams:
        P, p = self.params, f"enc.{l}.attn"
        return AttentionParams(P[f"{p}.wq"], P[f"{p}.bq"], P[f"{p}.wk"], P[f"{p}.bk"],
                               P[f"{p}.wv"], P[f"{p}.bv"], P[f"{p}.wo"], P[f"{p}.bo"])

    def encode(self, z: Tensor) -> Tensor:
        cfg, P = self.config, self.params
        drop_rng = self.dropout_rng if self.training else None
        for l in range(cfg.num_encoders):
            p = f"enc.{l}"
            h = ops.layernorm(z, P[f"{p}.ln1.gamma"], P[f"{p}.ln1.beta"], cfg.ln_eps)
            h = mhsa(h, self._attention(l), cfg.heads, cfg.attn_dropout_p, self.training, drop_rng)
            z = ops.add(z, h)
            h = ops.layernorm(z, P[f"{p}.ln2.gamma"], P[f"{p}.ln2.beta"], cfg.ln_eps)
            h = ops.gelu(ops.linear(h, P[f"{p}.mlp.fc1.w"], P[f"{p}.mlp.fc1.b"]))
            h = ops.dropout(h, cfg.dropout_p, self.training, drop_rng)
            h = ops.linear(h, P[f"{p}.mlp.fc2.w"], P[f"{p}.mlp.fc2.b"])
            h = ops.dropout(h, cfg.dropout_p, self.training, drop_rng)
            z = ops.add(z, h)
        return z

    def pool(self, z: Tensor, return_weights: bool = False):
        P = self.params
        return seqpool(z, P["seqpool.ln.gamma"], P["seqpool.ln.beta"], P["seqpool.fc.w"], P["seqpool.fc.b"],
                       self.config.ln_eps, return_weights=return_weights)

    def forward(self, x, token_perm=None) -> Tensor:
        """Logits ``[N, num_classes]``.

        ``token_perm`` optionally reorders the token axis right after the
        tokenizer (used to check that the encoder + SeqPool ignore order).
        """
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x), dtype=self.dtype)
        elif x.dtype != self.dtype:
            x = Tensor(x.data, dtype=self.dtype)
        if x.ndim != 4 or tuple(x.shape[1:]) != self.config.input_shape:
            raise DimensionError(f"expected input [N, {', '.join(map(str, self.config.input_shape))}], got {x.shape}")
        if self.relu_taps is not None:
            self.relu_taps = []
        z = self.tokenize(x)
        if token_perm is not None:
            z = ops.take(z, token_perm, axis=1)
        z = self.encode(z)
        pooled = self.pool(z)
        return ops.linear(pooled, self.params["head.fc.w"], self.params["head.fc.b"])

    __call__ = forward

    # -- flat views ----------------------------------------------------
    def stat_arrays(self):
        """``(name, array)`` pairs for every running statistic, in canonical order."""
        for name, st in self.bn.items():
            yield f"{name}.running_mean", st.running_mean
            yield f"{name}.running_var", st.running_var

    def _set_stat(self, name: str, value: np.ndarray) -> None:
        bn_name, field_name = name.rsplit(".", 1)
        setattr(self.bn[bn_name], field_name, np.array(value, dtype=self.dtype))


def build(config: LCTConfig, rng: Rng | int = 0) -> LCTModel:
    return LCTModel(config, rng)
