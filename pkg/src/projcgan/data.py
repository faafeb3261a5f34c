"""Synthetic conditional datasets, CIFAR binary I/O and batch samplers."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .resize import downsample_box
from .tensor import Rng

RING_SIGMA = 0.1


@dataclass
class Dataset:
    x: np.ndarray                # [N, D] vectors or [N, 3, H, W] images in [-1, 1]
    labels: np.ndarray           # int64 [N]
    n_classes: int
    split: str = "train"
    kind: str = "vector"         # vector | image
    centers: np.ndarray | None = None
    sigma: float | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.x)):
            raise ValueError("dataset contains non-finite values")
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self):
        return len(self.x)

    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def sample(self, rng: Rng, n: int):
        idx = rng.integers(0, len(self.x), n)
        return self.x[idx], self.labels[idx]

    def sample_condition(self, rng: Rng, n: int) -> np.ndarray:
        # uniform class prior for fake batches
        return rng.integers(0, self.n_classes, n)

    def of_class(self, c: int) -> np.ndarray:
        return self.x[self.labels == c]


@dataclass
class SRDataset:
    """High-res images paired with their box-downsampled low-res versions."""

    hi: np.ndarray
    lo: np.ndarray
    labels: np.ndarray
    n_classes: int
    factor: int = 4

    def __len__(self):
        return len(self.hi)

    def sample(self, rng: Rng, n: int):
        idx = rng.integers(0, len(self.hi), n)
        return self.hi[idx], self.lo[idx]

    def sample_condition(self, rng: Rng, n: int) -> np.ndarray:
        return self.lo[rng.integers(0, len(self.lo), n)]


def ring_centers(n_classes: int, radius: float = 1.0) -> np.ndarray:
    ang = 2 * np.pi * np.arange(n_classes) / n_classes
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _blob_palette(n_classes: int) -> np.ndarray:
    hues = np.arange(n_classes) / n_classes
    # crude hue -> RGB, all channels kept in [0.2, 1]
    rgb = np.stack([np.abs(np.cos(np.pi * (hues + k / 3))) for k in range(3)], axis=1)
    return 0.2 + 0.8 * rgb


def blob_images(rng: Rng, n_classes: int, n_per_class: int, size: int = 16,
                noise: float = 0.05, dtype=np.float32):
    """Gaussian blobs whose position and colour encode the class.

    Returns (images [N, 3, size, size] in [-1, 1], labels).
    """
    centers = size / 2 + (size / 4) * ring_centers(n_classes)
    palette = _blob_palette(n_classes)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    labels = np.repeat(np.arange(n_classes), n_per_class)
    n = len(labels)
    jitter = rng.normal((n, 2), dtype=np.float64) * (size / 32)
    width = (size / 8) * (1 + 0.25 * rng.uniform(-1, 1, (n,), dtype=np.float64))
    cx = centers[labels, 0] + jitter[:, 0]
    cy = centers[labels, 1] + jitter[:, 1]
    d2 = (xx[None] - cx[:, None, None]) ** 2 + (yy[None] - cy[:, None, None]) ** 2
    blob = np.exp(-d2 / (2 * width[:, None, None] ** 2))
    img = -1 + 2 * blob[:, None] * palette[labels][:, :, None, None]
    img = img + noise * rng.normal(img.shape, dtype=np.float64)
    return np.clip(img, -1, 1).astype(dtype), labels


def gen_synth_mixture(rng: Rng, n_classes: int, n_per_class: int, mode: str = "vector2d",
                      size: int = 16, noise: float = 0.05, dtype=np.float32) -> Dataset:
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if n_per_class < 2:
        raise ValueError("need at least two samples per class")
    if mode == "vector2d":
        centers = ring_centers(n_classes)
        labels = np.repeat(np.arange(n_classes), n_per_class)
        x = centers[labels] + RING_SIGMA * rng.normal((len(labels), 2), dtype=np.float64)
        return Dataset(x.astype(dtype), labels, n_classes, kind="vector",
                       centers=centers, sigma=RING_SIGMA)
    if mode == "blob_images":
        x, labels = blob_images(rng, n_classes, n_per_class, size, noise, dtype)
        return Dataset(x, labels, n_classes, kind="image")
    raise ValueError(f"unknown mixture mode {mode!r}")


def sr_pairs(images: np.ndarray, labels, n_classes: int, factor: int = 4) -> SRDataset:
    return SRDataset(images, downsample_box(images, factor).astype(images.dtype),
                     np.asarray(labels), n_classes, factor)


# -- CIFAR binary layout -------------------------------------------------------------

def load_cifar_binary(path, label_bytes: int | None = None, dtype=np.float32) -> Dataset:
    """Read CIFAR-10 (1 label byte) or CIFAR-100 (coarse + fine) records.

    Pixels are mapped from [0, 255] to [-1, 1]; for CIFAR-100 the fine label
    is kept.
    """
    raw = Path(path).read_bytes()
    if label_bytes is None:
        label_bytes = 1 if len(raw) % 3073 == 0 else 2
    rec = 3072 + label_bytes
    if len(raw) == 0 or len(raw) % rec:
        raise ValueError(f"{path}: size {len(raw)} is not a multiple of the record size {rec}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
    labels = arr[:, label_bytes - 1].astype(np.int64)
    pix = arr[:, label_bytes:].reshape(-1, 3, 32, 32)
    x = (pix.astype(np.float64) / 127.5 - 1.0).astype(dtype)
    n_classes = 10 if label_bytes == 1 else 100
    return Dataset(x, labels, n_classes, kind="image")


def write_cifar_binary(path, images_u8: np.ndarray, labels, coarse=None) -> None:
    images_u8 = np.asarray(images_u8, dtype=np.uint8).reshape(len(images_u8), -1)
    cols = [np.asarray(labels, dtype=np.uint8)[:, None]]
    if coarse is not None:
        cols.insert(0, np.asarray(coarse, dtype=np.uint8)[:, None])
    Path(path).write_bytes(np.concatenate(cols + [images_u8], axis=1).tobytes())
