"""``lct-ckpt-v1`` checkpoint files.

Layout: a UTF-8 JSON header, then ``b"\\n\\0"``, then the raw little-endian
IEEE-754 buffers of every tensor concatenated in header order. The header::

    {"format": "lct-ckpt-v1",
     "config": {...LCTConfig fields...},
     "tensors": [{"name": str, "shape": [int], "dtype": "f32"|"f64",
                  "offset": int, "segment": "param"|"stat"}, ...]}

``offset`` counts bytes from the first byte after the terminator.
"""

from __future__ import annotations

import json
import os

import numpy as np

from ..errors import FormatError
from ..tensor.tensor import dtype_name
from .config import LCTConfig
from .lct import LCTModel

FORMAT = "lct-ckpt-v1"
TERMINATOR = b"\n\x00"
_LE = {"f32": "<f4", "f64": "<f8"}


def _entries(model: LCTModel):
    for name, p in model.params.items():
        yield name, p.data, "param"
    for name, a in model.stat_arrays():
        yield name, a, "stat"


def encode(model: LCTModel, extra: dict | None = None) -> bytes:
    tensors, blobs, off = [], [], 0
    for name, arr, segment in _entries(model):
        dt = dtype_name(arr.dtype)
        raw = np.ascontiguousarray(arr, dtype=_LE[dt]).tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": dt, "offset": off, "segment": segment})
        blobs.append(raw)
        off += len(raw)
    header = {"format": FORMAT, "config": model.config.to_dict(), "tensors": tensors}
    if extra:
        header["extra"] = extra
    return json.dumps(header, sort_keys=True).encode("utf-8") + TERMINATOR + b"".join(blobs)


def save(model: LCTModel, path, extra: dict | None = None) -> None:
    data = encode(model, extra)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def decode(buf: bytes) -> tuple[dict, dict]:
    """Return ``(header, {name: array})``; raises :class:`FormatError`."""
    cut = buf.find(TERMINATOR)
    if cut < 0:
        raise FormatError("checkpoint header terminator not found")
    try:
        header = json.loads(buf[:cut].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint header is not valid JSON: {exc}") from None
    if header.get("format") != FORMAT:
        raise FormatError(f"unsupported checkpoint format {header.get('format')!r}")
    body = memoryview(buf)[cut + len(TERMINATOR):]
    arrays = {}
    for t in header["tensors"]:
        dt = np.dtype(_LE[t["dtype"]])
        count = int(np.prod(t["shape"], dtype=np.int64))
        end = t["offset"] + count * dt.itemsize
        if end > len(body):
            raise FormatError(f"checkpoint truncated inside tensor {t['name']!r}")
        arr = np.frombuffer(body[t["offset"]:end], dtype=dt).reshape(t["shape"])
        arrays[t["name"]] = arr.astype(dt.newbyteorder("="))
    return header, arrays


def load(path, rng=0) -> LCTModel:
    with open(path, "rb") as fh:
        header, arrays = decode(fh.read())
    model = LCTModel(LCTConfig.from_dict(header["config"]), rng)
    load_into(model, arrays)
    return model


def load_into(model: LCTModel, arrays: dict) -> None:
    expected = [name for name, _, _ in _entries(model)]
    if list(arrays) != expected:
        missing = set(expected) - set(arrays)
        raise FormatError(f"checkpoint tensors do not match the model (missing {sorted(missing)[:5]})")
    for name, p in model.params.items():
        if arrays[name].shape != p.shape:
            raise FormatError(f"shape mismatch for {name}: {arrays[name].shape} vs {p.shape}")
        p.data = np.array(arrays[name], dtype=model.dtype)
    for name, _ in list(model.stat_arrays()):
        model._set_stat(name, arrays[name])
