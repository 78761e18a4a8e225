"""Datasets: a seeded Gaussian-blob generator and the ``ENTD`` binary format.

Binary layout (little-endian)::

    b"ENTD" | u32 count | u32 classes | u32 channels | u32 height | u32 width
    count x ( channels*height*width u8 pixels, row-major | u8 label )
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"ENTD"
_HEADER = struct.Struct("<4s5I")


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    classes: int

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, idx) -> Dataset:
        return Dataset(self.images[idx], self.labels[idx], self.classes)


def synthetic(classes: int, channels: int, height: int, width: int, n_per_class: int,
              seed: int, split: str = "train", noise: float = 0.35) -> Dataset:
    """Gaussian-blob images; each class owns a fixed pair of blob centres.

    ``split`` selects an independent sample stream over the same class
    prototypes, so a held-out set can be drawn for any seed.
    """
    if min(classes, channels, height, width, n_per_class) < 1:
        raise DatasetError("synthetic: every size must be positive")
    proto_rng = np.random.default_rng(seed)
    centres = proto_rng.uniform(0, 1, size=(classes, channels, 2, 2)) * [height - 1, width - 1]
    widths = proto_rng.uniform(0.8, 1.6, size=(classes, channels, 2))
    rng = np.random.default_rng([seed, {"train": 0, "test": 1}.get(split, 2)])
    yy, xx = np.mgrid[0:height, 0:width]
    labels = np.repeat(np.arange(classes), n_per_class)
    n = len(labels)
    shift = rng.uniform(-1.0, 1.0, size=(n, 2))
    amp = rng.uniform(0.6, 1.0, size=(n, 1, 1, 1))
    images = np.zeros((n, channels, height, width))
    for b in range(2):
        cy = centres[labels, :, b, 0] + shift[:, None, 0]
        cx = centres[labels, :, b, 1] + shift[:, None, 1]
        s = widths[labels, :, b]
        d2 = (yy[None, None] - cy[..., None, None]) ** 2 + (xx[None, None] - cx[..., None, None]) ** 2
        images += np.exp(-d2 / (2 * s[..., None, None] ** 2))
    images = amp * images + noise * rng.standard_normal(images.shape)
    order = rng.permutation(n)
    return Dataset(np.clip(images, 0.0, 1.0)[order], labels[order], classes)


def write_binary(path: str | Path, dataset: Dataset) -> None:
    n, c, h, w = dataset.images.shape
    pixels = np.round(np.clip(dataset.images, 0, 1) * 255).astype(np.uint8).reshape(n, -1)
    body = np.concatenate([pixels, dataset.labels.astype(np.uint8)[:, None]], axis=1)
    Path(path).write_bytes(_HEADER.pack(MAGIC, n, dataset.classes, c, h, w) + body.tobytes())


def read_binary(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetError(f"{path}: truncated header ({len(raw)} of {_HEADER.size} bytes)")
    magic, n, classes, c, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = n * (c * h * w + 1)
    actual = len(raw) - _HEADER.size
    if actual != expected:
        raise DatasetError(f"{path}: expected {expected} bytes of samples, found {actual}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size).reshape(n, c * h * w + 1)
    labels = body[:, -1].astype(np.int64)
    if n and labels.max() >= classes:
        raise DatasetError(f"{path}: label {labels.max()} >= classes {classes}")
    images = body[:, :-1].reshape(n, c, h, w).astype(np.float64) / 255.0
    return Dataset(images, labels, classes)


def load_dataset(descriptor: str, split: str = "train") -> Dataset:
    """``synthetic:classes,c,h,w,n_per_class,seed`` or a path to an ENTD file."""
    if descriptor.startswith("synthetic:"):
        try:
            fields = [int(v) for v in descriptor[len("synthetic:"):].split(",")]
        except ValueError:
            raise DatasetError(f"bad synthetic descriptor {descriptor!r}") from None
        if len(fields) != 6:
            raise DatasetError(f"synthetic descriptor needs 6 fields, got {len(fields)}")
        return synthetic(*fields, split=split)
    return read_binary(descriptor)
