"""Evaluation metrics: FID / intra-FID, inception-style score, MS-SSIM,
MC-ensemble prediction, and the feature extractors they run on."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import DisBlock, Linear, Module
from .tensor import Rng, Tensor

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


# -- Gaussian statistics & FID -----------------------------------------------------

@dataclass
class GaussianStats:
    mu: np.ndarray
    cov: np.ndarray
    n: int


def gaussian_stats(features) -> GaussianStats:
    x = np.asarray(features.data if isinstance(features, Tensor) else features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("gaussian_stats needs at least two feature rows")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = xc.T @ xc / (x.shape[0] - 1)
    return GaussianStats(mu, (cov + cov.T) / 2, x.shape[0])


def _psd_sqrt(c: np.ndarray, tol: float) -> np.ndarray:
    w, v = np.linalg.eigh((c + c.T) / 2)
    floor = -tol * max(1.0, float(np.abs(w).max(initial=0.0)))
    if (w < floor).any():
        raise np.linalg.LinAlgError(f"matrix not positive semi-definite (min eigenvalue {w.min()})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def fid(a: GaussianStats, b: GaussianStats, eps_reg: float | None = None,
        tol: float = 1e-8) -> float:
    """||mu_a - mu_b||^2 + tr(C_a + C_b - 2 (C_a^1/2 C_b C_a^1/2)^1/2).

    ``eps_reg`` adds eps_reg * tr(C)/d * I to both covariances; by default it is
    applied only when the plain computation fails.
    """
    if a.mu.shape != b.mu.shape:
        raise ValueError("feature dimensions differ")
    ca, cb = a.cov, b.cov
    if eps_reg:
        d = ca.shape[0]
        ca = ca + eps_reg * np.trace(ca) / d * np.eye(d)
        cb = cb + eps_reg * np.trace(cb) / d * np.eye(d)
    try:
        sa = _psd_sqrt(ca, tol)
        cross = _psd_sqrt(sa @ cb @ sa, tol)
    except np.linalg.LinAlgError:
        if eps_reg:
            raise
        return fid(a, b, eps_reg=1e-6, tol=tol)
    diff = a.mu - b.mu
    val = float(diff @ diff + np.trace(ca) + np.trace(cb) - 2 * np.trace(cross))
    return max(val, 0.0)


def fid_from_features(fa, fb) -> float:
    return fid(gaussian_stats(fa), gaussian_stats(fb))


def intra_fid(sample_class, real_features, real_labels, c: int, n_gen: int,
              extractor) -> float:
    """FID between all real class-c features and ``n_gen`` generated class-c samples.

    ``sample_class(c, n)`` returns generated samples; ``extractor.features``
    maps samples to feature rows.
    """
    real_labels = np.asarray(real_labels)
    sel = real_labels == c
    if not sel.any():
        raise ValueError(f"class {c} absent from the dataset")
    if n_gen < 2:
        raise ValueError("need at least two generated samples")
    fake = extractor.features(sample_class(c, n_gen))
    return fid(gaussian_stats(np.asarray(real_features)[sel]), gaussian_stats(fake))


def intra_fids(sample_class, real_x, real_labels, n_classes: int, n_gen: int,
               extractor) -> np.ndarray:
    feats = extractor.features(real_x)
    return np.array([intra_fid(sample_class, feats, real_labels, c, n_gen, extractor)
                     for c in range(n_classes)])


# -- inception-style score ------------------------------------------------------------

def inception_style_score(probs) -> float:
    """exp(E_x KL(p(y|x) || p(y))) with p(y) the batch marginal."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or len(p) == 0:
        raise ValueError("probs must be a non-empty [n, C] array")
    if np.abs(p.sum(axis=1) - 1).max() > 1e-6 or (p < 0).any():
        raise ValueError("rows of probs must be probability vectors")
    marg = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(marg)), 0.0)
    return float(np.exp(terms.sum(axis=1).mean()))


def inception_style_score_splits(probs, n_splits: int = 10) -> tuple[float, float]:
    """Mean and std of the score over ``n_splits`` contiguous chunks.

    The split count is capped at the number of rows.
    """
    p = np.asarray(probs)
    n_splits = max(1, min(n_splits, len(p)))
    scores = [inception_style_score(chunk) for chunk in np.array_split(p, n_splits)]
    return float(np.mean(scores)), float(np.std(scores))


# -- SSIM / MS-SSIM --------------------------------------------------------------------

def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return g


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' filtering along the last two axes
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ g


def _ssim_terms(x, y, g, c1, c2):
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    return lum, cs


def ssim(x, y, data_range=(0.0, 1.0), win: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    x, y = _prep(x, y, data_range, win)
    g = gaussian_window(win, sigma)
    lum, cs = _ssim_terms(x, y, g, k1**2, k2**2)
    return float((lum * cs).mean())


def _prep(x, y, data_range, win):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if min(x.shape[-2:]) < win:
        raise ValueError(f"image extent {x.shape[-2:]} smaller than the {win}x{win} window")
    lo, hi = data_range
    return (x - lo) / (hi - lo), (y - lo) / (hi - lo)


def ms_ssim(x, y, data_range=(0.0, 1.0), weights=MS_SSIM_WEIGHTS, win: int = 11,
            sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
            scales: int | None = None) -> float:
    """Multi-scale SSIM of images [..., H, W] mapped from ``data_range`` to [0, 1].

    The scale count drops for images too small for all five scales and the
    remaining weights are renormalized. Negative contrast-structure terms are
    clamped to zero so the result stays in [0, 1].
    """
    x, y = _prep(x, y, data_range, win)
    max_scales = 1
    while max_scales < len(weights) and min(x.shape[-2:]) // 2**max_scales >= win:
        max_scales += 1
    m = max_scales if scales is None else min(scales, max_scales)
    w = np.asarray(weights[:m], dtype=np.float64)
    w = w / w.sum()
    g = gaussian_window(win, sigma)
    c1, c2 = k1**2, k2**2
    vals = []
    for j in range(m):
        lum, cs = _ssim_terms(x, y, g, c1, c2)
        axes = (-2, -1)
        if j == m - 1:
            vals.append(np.clip((lum * cs).mean(axis=axes), 0, None))
        else:
            vals.append(np.clip(cs.mean(axis=axes), 0, None))
            x = _pool2(x)
            y = _pool2(y)
    out = np.prod([v**wj for v, wj in zip(vals, w)], axis=0)
    return float(np.mean(out))


def _pool2(img):
    h, w = img.shape[-2:]
    img = img[..., : h - h % 2, : w - w % 2]
    return img.reshape(*img.shape[:-2], h // 2, 2, w // 2, 2).mean(axis=(-3, -1))


# -- feature extractors ---------------------------------------------------------------

class RingPosterior:
    """Exact features/posteriors for the 2-D ring mixture.

    Features are the raw coordinates; class probabilities are the Bayes
    posteriors of equal-weight isotropic Gaussians.
    """

    def __init__(self, centers: np.ndarray, sigma: float):
        self.centers = np.asarray(centers, dtype=np.float64)
        self.sigma = sigma
        self.n_classes = len(self.centers)

    def features(self, x) -> np.ndarray:
        return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    def logits(self, x) -> np.ndarray:
        x = self.features(x)
        d2 = ((x[:, None, :] - self.centers[None]) ** 2).sum(-1)
        return -d2 / (2 * self.sigma**2)

    def probs(self, x) -> np.ndarray:
        z = self.logits(x)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


class Classifier(Module):
    """Small CNN classifier; its penultimate layer supplies metric features."""

    def __init__(self, rng: Rng, n_classes: int, channels: int = 3, width: int = 32,
                 n_down: int = 2, feature_dim: int = 64):
        super().__init__()
        blocks, c = [], channels
        for i in range(n_down):
            blocks.append(DisBlock(rng, c, width, downsample=True, first=(i == 0),
                                   spectral_norm=False))
            c = width
        self.blocks = blocks
        self.fc = Linear(rng, width, feature_dim)
        self.out = Linear(rng, feature_dim, n_classes)
        self.n_classes = n_classes

    def hidden(self, x: Tensor) -> Tensor:
        h = T.as_tensor(x)
        for b in self.blocks:
            h = b(h)
        h = T.mean(T.relu(h), (2, 3))
        return T.relu(self.fc(h))

    def forward(self, x: Tensor) -> Tensor:
        return self.out(self.hidden(x))

    def logits(self, x) -> Tensor:
        return self.forward(T.as_tensor(x))


class FeatureExtractor:
    """Frozen wrapper exposing features / logits / probs as numpy in batches."""

    def __init__(self, net: Classifier, batch: int = 256):
        self.net = net.eval()
        net.set_requires_grad(False)
        self.batch = batch
        self.n_classes = net.n_classes

    def _map(self, fn, x):
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        if len(x) == 0:
            raise ValueError("empty sample set")
        outs = []
        with T.no_grad():
            for i in range(0, len(x), self.batch):
                outs.append(fn(Tensor(x[i : i + self.batch], dtype=self.dtype)).data)
        return np.concatenate(outs).astype(np.float64)

    @property
    def dtype(self):
        return self.net.out.weight.dtype

    def features(self, x) -> np.ndarray:
        return self._map(self.net.hidden, x)

    def logits(self, x) -> np.ndarray:
        return self._map(self.net.forward, x)

    def probs(self, x) -> np.ndarray:
        z = self.logits(x)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def train_classifier(x: np.ndarray, labels: np.ndarray, n_classes: int, rng: Rng,
                     steps: int = 300, batch: int = 64, lr: float = 1e-3, **kw) -> FeatureExtractor:
    from .training import Adam, cross_entropy

    net = Classifier(rng, n_classes, channels=x.shape[1], **kw)
    opt = Adam(net.parameters(), lr, 0.9, 0.999)
    for _ in range(steps):
        idx = rng.integers(0, len(x), batch)
        net.zero_grad()
        loss = cross_entropy(net(Tensor(x[idx])), labels[idx])
        loss.backward()
        opt.step()
    return FeatureExtractor(net)


def accuracy(extractor, x, labels) -> float:
    return float((extractor.logits(x).argmax(axis=1) == np.asarray(labels)).mean())


# -- MC ensemble & coverage ----------------------------------------------------------

def mc_average_logits(sr_generator, classifier, y_lo, n_mc: int, rng: Rng,
                      z_dim: int) -> np.ndarray:
    """Classifier logits averaged over ``n_mc`` SR samples with independent z."""
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    y_lo = np.asarray(y_lo)
    acc = None
    with T.no_grad():
        for _ in range(n_mc):
            z = Tensor(rng.normal((len(y_lo), z_dim), dtype=y_lo.dtype), dtype=y_lo.dtype)
            x = sr_generator(z, Tensor(y_lo, dtype=y_lo.dtype)).data
            lg = np.asarray(classifier.logits(x), dtype=np.float64)
            acc = lg if acc is None else acc + lg
    return acc / n_mc


def mc_ensemble_predict(sr_generator, classifier, y_lo, n_mc: int, rng: Rng,
                        z_dim: int) -> np.ndarray:
    return mc_average_logits(sr_generator, classifier, y_lo, n_mc, rng, z_dim).argmax(axis=1)


def mode_coverage(samples, centers, radius: float) -> np.ndarray:
    """Fraction of samples within ``radius`` of each center."""
    s = np.asarray(samples, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64)
    d = np.sqrt(((s[:, None, :] - c[None]) ** 2).sum(-1))
    return (d <= radius).mean(axis=0)
