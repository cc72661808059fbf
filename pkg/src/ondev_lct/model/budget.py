"""Parameter and MAC accounting, plus flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError
from .config import LCTConfig
from .lct import LCTModel


@dataclass(frozen=True)
class BudgetReport:
    trainable_params: int
    macs: int

    def to_dict(self) -> dict:
        return {"trainable_params": self.trainable_params, "macs": self.macs}


def count_params(model: LCTModel) -> int:
    """Every learnable element; BN running statistics are not counted."""
    return int(sum(p.size for p in model.params.values()))


def count_stats(model: LCTModel) -> int:
    return int(sum(a.size for _, a in model.stat_arrays()))


def encoder_macs(tokens: int, dim: int, hidden: int) -> int:
    """QKV + output projections, score and value products, two-layer MLP."""
    return 3 * tokens * dim * dim + 2 * tokens * tokens * dim + tokens * dim * dim + 2 * tokens * dim * hidden


def count_macs(model_or_config, input_shape=None) -> int:
    """Analytic multiply-accumulate count for one forward pass at batch 1.

    conv: kh*kw*Cin*Cout*H'*W'; depthwise: kh*kw*C*H'*W'; linear: in*out per
    token; attention adds 2*T^2*D. SeqPool's score map and its weighted sum
    each cost T*D. Normalization and activations count zero.
    """
    cfg = model_or_config.config if isinstance(model_or_config, LCTModel) else model_or_config
    h, w, c = tuple(input_shape) if input_shape is not None else cfg.input_shape
    sc, d, s = cfg.stem_channels, cfg.embed_dim, cfg.bottleneck_shrink
    macs = 0
    h1, w1 = -(-h // 2), -(-w // 2)
    macs += 9 * c * sc * h1 * w1
    macs += (cfg.num_stem_convs - 1) * 9 * sc * sc * h1 * w1
    h2, w2 = -(-h1 // 2), -(-w1 // 2)
    macs += 9 * sc * h2 * w2 + sc * d * h2 * w2
    macs += cfg.num_bottlenecks * (d * s * h2 * w2 + 9 * s * h2 * w2 + s * d * h2 * w2)
    t = h2 * w2
    macs += cfg.num_encoders * encoder_macs(t, d, cfg.mlp_hidden)
    macs += 2 * t * d
    macs += d * cfg.num_classes
    return int(macs)


def budget(model: LCTModel, input_shape=None) -> BudgetReport:
    return BudgetReport(count_params(model), count_macs(model, input_shape))


# -- flat vectors -------------------------------------------------------

def flat_layout(model: LCTModel) -> tuple[int, int]:
    """``(n_params, n_stats)``: the parameter segment precedes the stats segment."""
    return count_params(model), count_stats(model)


def get_flat_params(model: LCTModel) -> np.ndarray:
    """All parameters then all running statistics, canonical order, one copy."""
    parts = [p.data.reshape(-1) for p in model.params.values()]
    parts += [a.reshape(-1) for _, a in model.stat_arrays()]
    return np.concatenate(parts).astype(model.dtype, copy=False)


def set_flat_params(model: LCTModel, v) -> None:
    v = np.asarray(v)
    n_params, n_stats = flat_layout(model)
    if v.ndim != 1 or v.size != n_params + n_stats:
        raise DimensionError(f"flat vector has {v.size} elements, model needs {n_params + n_stats}")
    off = 0
    for p in model.params.values():
        n = p.size
        p.data = np.array(v[off:off + n], dtype=model.dtype).reshape(p.shape)
        off += n
    for name, a in list(model.stat_arrays()):
        n = a.size
        model._set_stat(name, v[off:off + n].reshape(a.shape))
        off += n
