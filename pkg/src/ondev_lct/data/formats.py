"""Readers and writers for the IDX and CIFAR binary formats.

IDX: big-endian ``uint32`` magic ``0x00000800 | ndim`` (``0x0803`` for
image files, ``0x0801`` for label files), ``ndim`` big-endian ``uint32``
extents, then raw ``uint8`` data.

CIFAR binary: fixed-size records of label byte(s) followed by 3,072 pixel
bytes stored channel-major (1,024 red, 1,024 green, 1,024 blue, each a
row-major 32x32 plane). CIFAR-10 has one label byte; CIFAR-100 has a
coarse then a fine label byte.
"""

from __future__ import annotations

import gzip
import os
import struct

import numpy as np

from ..errors import FormatError
from .dataset import Dataset, manifest, standardize

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_PIXELS = 3 * 32 * 32


def _read_bytes(path) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rb") as fh:
            return fh.read()
    except (gzip.BadGzipFile, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from None


def parse_idx(buf: bytes, expected_magic: int | None = None, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 4:
        raise FormatError(f"{source}: too short for an IDX header")
    (magic,) = struct.unpack(">I", buf[:4])
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"{source}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 8 != 0x08:
        raise FormatError(f"{source}: only unsigned-byte IDX files are supported (magic 0x{magic:08x})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if ndim == 0 or len(buf) < header:
        raise FormatError(f"{source}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) != header + count:
        raise FormatError(f"{source}: IDX payload has {len(buf) - header} bytes, header promises {count}")
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    return parse_idx(_read_bytes(path), expected_magic, str(path))


def encode_idx(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    return struct.pack(">I", 0x0800 | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()


def write_idx(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_idx(arr))


def load_idx(images_path, labels_path, name: str = "mnist", num_classes: int | None = None,
             limit: int | None = None, stats: tuple | None = None) -> Dataset:
    """MNIST-family IDX pair -> normalized ``[N, 28, 28, 1]`` dataset.

    Any malformed file raises :class:`FormatError` before a dataset exists.
    """
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    if num_classes is None:
        entry = manifest()["datasets"].get(name)
        num_classes = entry["num_classes"] if entry else int(labels.max()) + 1
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"label {int(labels.max())} out of range for {num_classes} classes")
    x = standardize(images[..., None], name, stats)
    return Dataset(x, labels.astype(np.int64), num_classes, name)


def parse_cifar(buf: bytes, label_bytes: int, source: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    """Return ``(uint8 images [N, 32, 32, 3], labels)``; the last label byte is the label."""
    rec = label_bytes + CIFAR_PIXELS
    if len(buf) == 0 or len(buf) % rec:
        raise FormatError(f"{source}: size {len(buf)} is not a multiple of the {rec}-byte record")
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(-1, rec)
    labels = raw[:, label_bytes - 1].astype(np.int64)
    images = raw[:, label_bytes:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def encode_cifar(images: np.ndarray, labels, coarse=None) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    planes = images.transpose(0, 3, 1, 2).reshape(len(images), CIFAR_PIXELS)
    cols = [np.asarray(labels, dtype=np.uint8)[:, None]]
    if coarse is not None:
        cols.insert(0, np.asarray(coarse, dtype=np.uint8)[:, None])
    return np.concatenate(cols + [planes], axis=1).tobytes()


def load_cifar_binary(paths, num_classes: int = 10, name: str | None = None) -> Dataset:
    """Concatenate CIFAR binary batch files into one normalized dataset."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    if num_classes not in (10, 100):
        raise FormatError("CIFAR binaries exist for 10 or 100 classes")
    label_bytes = 1 if num_classes == 10 else 2
    name = name or f"cifar{num_classes}"
    parts = [parse_cifar(_read_bytes(p), label_bytes, str(p)) for p in paths]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    if labels.max() >= num_classes:
        raise FormatError(f"label {int(labels.max())} out of range for {num_classes} classes")
    return Dataset(standardize(images, name), labels, num_classes, name)
