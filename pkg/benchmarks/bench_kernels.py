"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Times every kernel on shapes taken from an OnDev-LCT-1/1 forward pass at
batch 64 on 28x28 inputs, then one full training step per backend.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from ondev_lct.model import LCTConfig, LCTModel
from ondev_lct.tensor import Tensor, kernels, ops
from ondev_lct.tensor.rng import Rng
from ondev_lct.training import make_optimizer, opt_step


def kernel_cases(dtype=np.float32):
    gen = np.random.default_rng(0)
    r = lambda *s: gen.standard_normal(s).astype(dtype)  # noqa: E731
    x_stem, x_dw = r(64, 28, 28, 1), r(64, 14, 14, 64)
    w_dw, g_dw = r(3, 3, 64), r(64, 7, 7, 64)
    cols = kernels.im2col(x_stem, 3, 3, 2, 0, 0, 14, 14)
    bn_x, ln_x = r(64 * 49, 128), r(64 * 49, 128)
    gamma, beta = np.ones(128, dtype), np.zeros(128, dtype)
    _, xhat, _, _, inv = kernels.bn_train_forward(bn_x, gamma, beta, 1e-5)
    _, lxhat, linv = kernels.ln_forward(ln_x, gamma, beta, 1e-5)
    _, cdf = kernels.gelu_forward(ln_x)
    return {
        "im2col": (x_stem, 3, 3, 2, 0, 0, 14, 14),
        "col2im": (cols, 28, 28, 2, 0, 0),
        "depthwise_forward": (x_dw, w_dw, 2, 0, 0, 7, 7),
        "depthwise_backward": (x_dw, w_dw, g_dw, 2, 0, 0),
        "bn_train_forward": (bn_x, gamma, beta, 1e-5),
        "bn_backward": (bn_x, xhat, gamma, inv),
        "ln_forward": (ln_x, gamma, beta, 1e-5),
        "ln_backward": (ln_x, lxhat, gamma, linv),
        "gelu_forward": (ln_x,),
        "gelu_backward": (ln_x, ln_x, cdf),
    }


def best_ms(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1000.0


def train_step_ms(repeat: int) -> float:
    cfg = LCTConfig.variant("OnDev-LCT-1/1", input_shape=(28, 28, 1))
    model = LCTModel(cfg, Rng(0)).train()
    opt = make_optimizer("adam", 1e-3)
    gen = np.random.default_rng(1)
    x = Tensor(gen.standard_normal((64, 28, 28, 1)).astype(np.float32))
    y = gen.integers(0, 10, 64)

    def step():
        model.zero_grad()
        loss = ops.label_smoothed_ce(model(x), y, 0.1)
        loss.backward()
        opt_step(opt, model.params)

    step()
    return best_ms(step, repeat)


def main(argv=None) -> dict:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    backends = list(kernels.available_backends())
    cases = kernel_cases()
    results = {}
    for name, call_args in cases.items():
        row = {}
        for b in backends:
            fn = getattr(kernels.available_backends()[b], name)
            row[b] = best_ms(lambda: fn(*call_args), args.repeat)
        results[name] = row
    step = {}
    for b in backends:
        kernels.use(b)
        step[b] = train_step_ms(max(3, args.repeat // 4))
    results["train_step[b=64]"] = step

    width = max(len(k) for k in results)
    print(f"{'kernel':<{width}}  " + "  ".join(f"{b + ' ms':>11}" for b in backends)
          + ("      speedup" if "cython" in backends else ""))
    for name, row in results.items():
        line = f"{name:<{width}}  " + "  ".join(f"{row[b]:11.3f}" for b in backends)
        if "cython" in row:
            line += f"  {row['python'] / row['cython']:10.2f}x"
        print(line)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)
    return results


if __name__ == "__main__":
    main()
