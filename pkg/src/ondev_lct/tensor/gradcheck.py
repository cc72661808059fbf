"""Central finite-difference verification of backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import PrecisionError
from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.worst < tolerance


def _rel_error(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | dict,
    step: float = 1e-5,
    tolerance: float | None = None,
    max_elements: int | None = None,
    rng: np.random.Generator | None = None,
    kink_inputs: Callable[[], list] | None = None,
    floor: float = 1e-4,
    five_point: bool = False,
) -> GradCheckReport:
    """Compare backward grads of ``f()`` against central differences.

    ``f`` rebuilds the scalar loss from the current parameter values on each
    call. ``max_elements`` samples that many coordinates per parameter
    (uniformly, via ``rng``) instead of checking every one.

    ``kink_inputs``, when given, returns the arrays that entered ReLUs during
    the most recent call of ``f``. A coordinate is excluded if some ReLU
    input ``u`` sits within ten steps of the kink, in units of how far that
    coordinate's step moves ``u``: ``min(|u+|, |u-|) < 10 * |u+ - u-| / 2``.
    Inputs sitting exactly at zero are always excluded.

    The relative error is ``|a - n| / max(|a|, |n|, floor)``. Coordinates
    whose gradient is smaller than ``floor`` are therefore held to an
    absolute bound of ``tolerance * floor``; central differences at
    ``step=1e-5`` carry roundoff of roughly ``1e-11`` to ``1e-10``, so a
    relative comparison of (near-)zero gradients would only measure noise.

    ``five_point`` switches to the fourth-order stencil
    ``(8(f(+h) - f(-h)) - (f(+2h) - f(-2h))) / 12h``. Its truncation error
    is O(h^4), so a larger step can suppress roundoff on losses that sum
    many terms without paying for curvature. Kink exclusion then uses the
    outer ``+-2h`` pair.
    """
    named = params.items() if isinstance(params, dict) else [(p.name or f"p{i}", p) for i, p in enumerate(params)]
    named = list(named)
    for name, p in named:
        if p.dtype != np.float64:
            raise PrecisionError(f"grad_check needs float64 parameters; {name} is {p.dtype}")
    for _, p in named:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in named}
    report = GradCheckReport()
    rng = rng if rng is not None else np.random.default_rng(0)

    def near_kink(up: list, um: list) -> bool:
        for a, b in zip(up, um):
            moved = 0.5 * np.abs(a - b)
            close = np.minimum(np.abs(a), np.abs(b))
            if np.any((close < 10.0 * moved) | ((a == 0) & (moved > 0))):
                return True
        return False

    def probe(flat, i, value):
        flat[i] = value
        out = float(f().data)
        taps = [a.copy() for a in kink_inputs()] if kink_inputs is not None else []
        return out, taps

    for name, p in named:
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        worst, n_checked, n_skipped = 0.0, 0, 0
        g_flat = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            with no_grad():  # perturbed passes only need the value
                fp, up = probe(flat, i, orig + step)
                fm, um = probe(flat, i, orig - step)
                if five_point:
                    fp2, up = probe(flat, i, orig + 2 * step)
                    fm2, um = probe(flat, i, orig - 2 * step)
            flat[i] = orig
            skip = kink_inputs is not None and near_kink(up, um)
            if skip:
                n_skipped += 1
                continue
            if five_point:
                num = (8.0 * (fp - fm) - (fp2 - fm2)) / (12.0 * step)
            else:
                num = (fp - fm) / (2.0 * step)
            worst = max(worst, _rel_error(num, float(g_flat[i]), floor))
            n_checked += 1
        report.max_rel_error[name] = worst
        report.checked[name] = n_checked
        report.skipped[name] = n_skipped
    for _, p in named:
        p.grad = None
    if tolerance is not None and not report.passed(tolerance):
        bad = {k: v for k, v in report.max_rel_error.items() if v >= tolerance}
        raise AssertionError(f"gradient check failed at tolerance {tolerance}: {bad}")
    return report
