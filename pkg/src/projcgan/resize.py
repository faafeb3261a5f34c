"""Image resampling used for SR training pairs and baselines.

All functions take arrays shaped [..., H, W] and use half-pixel centers with
edge clamping, so a constant image stays constant.
"""

import numpy as np


def downsample_box(x: np.ndarray, factor: int) -> np.ndarray:
    """Average over non-overlapping factor x factor cells."""
    *lead, h, w = x.shape
    if h % factor or w % factor:
        raise ValueError(f"extent {h}x{w} not divisible by {factor}")
    return x.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    return np.where(
        t <= 1, (a + 2) * t**3 - (a + 3) * t**2 + 1,
        np.where(t < 2, a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a, 0.0),
    )


def interp_matrix(n_in: int, n_out: int, kind: str = "bilinear") -> np.ndarray:
    """[n_out, n_in] matrix M with out = M @ in along one axis."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    m = np.zeros((n_out, n_in))
    if kind == "bilinear":
        lo = np.floor(src).astype(int)
        frac = src - lo
        for o in range(n_out):
            for idx, wgt in ((lo[o], 1 - frac[o]), (lo[o] + 1, frac[o])):
                m[o, min(max(idx, 0), n_in - 1)] += wgt
    elif kind == "bicubic":
        base = np.floor(src).astype(int)
        for o in range(n_out):
            for k in range(-1, 3):
                idx = base[o] + k
                m[o, min(max(idx, 0), n_in - 1)] += _cubic(src[o] - idx)
    else:
        raise ValueError(f"unknown interpolation {kind!r}")
    return m


def upsample(x: np.ndarray, factor: int, kind: str = "bilinear") -> np.ndarray:
    h, w = x.shape[-2:]
    mh = interp_matrix(h, h * factor, kind)
    mw = interp_matrix(w, w * factor, kind)
    out = np.einsum("oh,...hw,pw->...op", mh, x.astype(np.float64), mw)
    return out.astype(x.dtype)


def upsample_bilinear(x: np.ndarray, factor: int) -> np.ndarray:
    return upsample(x, factor, "bilinear")


def upsample_bicubic(x: np.ndarray, factor: int) -> np.ndarray:
    return upsample(x, factor, "bicubic")
