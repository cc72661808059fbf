"""Kernel backend selection.

The compiled extension is used when it imports; otherwise (or when
``LCT_PURE_PYTHON=1``) the numpy implementation takes over. Both expose the
same functions: patch gathering for dense convolutions, depthwise
convolution, and fused batch-norm, layer-norm and GELU passes.
"""

import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)


def _load():
    if os.environ.get("LCT_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        log.debug("compiled kernels unavailable; using numpy fallback")
        return _kernels_py
    return _kernels


_impl = _load()
BACKEND = _impl.BACKEND


def available_backends() -> dict:
    out = {"python": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]
        out["cython"] = _kernels
    except ImportError:
        pass
    return out


def use(name: str) -> None:
    """Switch the active backend at runtime (``"cython"`` or ``"python"``)."""
    global _impl, BACKEND
    backends = available_backends()
    if name not in backends:
        raise ImportError(f"kernel backend {name!r} is not available")
    _impl = backends[name]
    BACKEND = name



_NAMES = ("im2col", "col2im", "depthwise_forward", "depthwise_backward", "bn_train_forward", "bn_backward",
          "ln_forward", "ln_backward", "gelu_forward", "gelu_backward")


def _dispatch(name):
    def call(*args):
        return getattr(_impl, name)(*args)

    call.__name__ = name
    return call


for _name in _NAMES:
    globals()[_name] = _dispatch(_name)
del _name
