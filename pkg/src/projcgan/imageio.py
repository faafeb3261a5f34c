"""8-bit image files and sample grids.

Values in [-1, 1] map to bytes by v = (x + 1) * 127.5 rounded half away from
zero and clipped to [0, 255]; bytes map back by x = v / 127.5 - 1.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def quantize(x) -> np.ndarray:
    v = (np.asarray(x, dtype=np.float64) + 1.0) * 127.5
    v = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def dequantize(b, dtype=np.float32) -> np.ndarray:
    return (np.asarray(b, dtype=np.float64) / 127.5 - 1.0).astype(dtype)


def _hwc(img: np.ndarray) -> np.ndarray:
    """[C, H, W] or [H, W] array to [H, W, 3] bytes."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[None]
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    if img.shape[0] != 3:
        raise ValueError(f"expected 1 or 3 channels, got shape {img.shape}")
    return np.ascontiguousarray(img.transpose(1, 2, 0))


def write_ppm(path, img_u8: np.ndarray) -> None:
    hwc = _hwc(img_u8).astype(np.uint8)
    h, w, _ = hwc.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + hwc.tobytes())


def read_ppm(path) -> np.ndarray:
    """Binary P6 file -> uint8 [3, H, W]."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: only 8-bit binary PPM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return data.reshape(h, w, 3).transpose(2, 0, 1).copy()


def write_image(path, img: np.ndarray) -> None:
    """Write a [C, H, W] image; floats are quantized from [-1, 1]."""
    img = np.asarray(img)
    u8 = img if img.dtype == np.uint8 else quantize(img)
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        write_ppm(path, u8)
    else:
        Image.fromarray(_hwc(u8)).save(path)


def read_image(path) -> np.ndarray:
    """uint8 [3, H, W] from a PPM or any Pillow-readable file."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    return np.asarray(Image.open(path).convert("RGB")).transpose(2, 0, 1).copy()


def make_grid(images: np.ndarray, ncol: int, pad: int = 0, fill: float = 1.0) -> np.ndarray:
    """Tile [N, C, H, W] into one [C, rows*H, ncol*W] image (row-major)."""
    images = np.asarray(images)
    n, c, h, w = images.shape
    nrow = -(-n // ncol)
    out = np.full((c, nrow * (h + pad) - pad, ncol * (w + pad) - pad), fill, dtype=images.dtype)
    for i in range(n):
        r, k = divmod(i, ncol)
        out[:, r * (h + pad): r * (h + pad) + h, k * (w + pad): k * (w + pad) + w] = images[i]
    return out
