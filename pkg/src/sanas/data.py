"""Synthetic image-classification data and the SADS1 raw dataset format.

SADS1 layout (integers little-endian uint64)::

    b"SADS1", n, channels, height, width, num_classes
    n*channels*height*width little-endian float32 pixels, row-major
    n uint8 labels
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError
from .tensor import make_rng

MAGIC = b"SADS1"


@dataclass
class Dataset:
    images: np.ndarray  # float32, (N, C, H, W)
    labels: np.ndarray  # uint8, (N,)
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], self.num_classes)

    def head(self, n: int) -> "Dataset":
        return self.subset(slice(0, min(n, len(self))))

    def batch(self, index) -> tuple[np.ndarray, np.ndarray]:
        return self.images[index].astype(np.float64), self.labels[index].astype(np.int64)


@dataclass(frozen=True)
class SyntheticParams:
    num_classes: int = 4
    n_train: int = 2048
    n_val: int = 512
    channels: int = 3
    size: int = 16
    noise: float = 1.0
    seed: int = 0


def class_patterns(num_classes: int, channels: int, size: int, seed: int) -> np.ndarray:
    """One low-frequency pattern per class, unit RMS per class."""
    rng = make_rng(seed, "patterns")
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    out = np.zeros((num_classes, channels, size, size))
    for c in range(num_classes):
        # orientation and frequency spread evenly so classes stay distinct
        theta = np.pi * c / num_classes
        freq = 1.0 + (c % 2)
        for ch in range(channels):
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.5, 1.0)
            u = (np.cos(theta) * xx + np.sin(theta) * yy) / size
            out[c, ch] = amp * np.sin(2 * np.pi * freq * u + phase)
        out[c] /= np.sqrt(np.mean(out[c] ** 2))
    return out


def make_synthetic(params: SyntheticParams = SyntheticParams()) -> tuple[Dataset, Dataset]:
    """Deterministic (train, val) split: class pattern plus Gaussian noise."""
    if params.num_classes < 2:
        raise ContractError(f"need at least 2 classes, got {params.num_classes}")
    if min(params.n_train, params.n_val, params.channels, params.size) <= 0:
        raise ContractError("dataset sizes must be positive")
    if params.noise < 0:
        raise ContractError(f"noise must be >= 0, got {params.noise}")
    patterns = class_patterns(params.num_classes, params.channels, params.size, params.seed)

    def draw(n: int, stream: str) -> Dataset:
        rng = make_rng(params.seed, stream)
        labels = np.arange(n) % params.num_classes
        rng.shuffle(labels)
        noise = rng.standard_normal((n, params.channels, params.size, params.size))
        images = patterns[labels] + params.noise * noise
        return Dataset(images.astype(np.float32), labels.astype(np.uint8), params.num_classes)

    return draw(params.n_train, "train"), draw(params.n_val, "val")


def save_dataset(path: str | Path, ds: Dataset) -> None:
    n, c, h, w = ds.images.shape
    header = MAGIC + struct.pack("<5Q", n, c, h, w, ds.num_classes)
    payload = np.ascontiguousarray(ds.images, dtype="<f4").tobytes() + ds.labels.astype(np.uint8).tobytes()
    Path(path).write_bytes(header + payload)


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    buf = path.read_bytes()
    if buf[:5] != MAGIC:
        raise FormatError(f"{path}: not a SADS1 dataset")
    n, c, h, w, k = struct.unpack_from("<5Q", buf, 5)
    pos = 5 + 40
    count = n * c * h * w
    if len(buf) != pos + 4 * count + n:
        raise FormatError(f"{path}: size does not match header ({n}x{c}x{h}x{w})")
    images = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).astype(np.float32).reshape(n, c, h, w)
    labels = np.frombuffer(buf, dtype=np.uint8, count=n, offset=pos + 4 * count).copy()
    if n and labels.max() >= k:
        raise FormatError(f"{path}: label {labels.max()} >= num_classes {k}")
    return Dataset(images, labels, int(k))
