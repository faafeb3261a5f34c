"""Generator and discriminator assemblies.

Discriminators share one trunk layout; the variant only decides where and
how the condition enters:

* ``projection``: logit = psi(phi) + <embed(y), phi>
* ``concat_input``: embedded y, spatially replicated, appended to the input channels
* ``concat_hidden``: same, appended to the output of one trunk block
* ``concat_output``: embedded y appended to the pooled feature before psi
* ``acgan``: unconditional adversarial head plus a class head on phi
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import (BatchNorm, CondBatchNorm, Conv2d, DenseBlock, DisBlock, Embedding,
                     GenBlock, Linear, Module, embed)
from .tensor import Tensor

VARIANTS = ("projection", "concat_input", "concat_hidden", "concat_output", "acgan")


@dataclass
class ModelSpec:
    """Declarative model description; everything the builders need."""

    kind: str = "vector"              # vector | image | superres
    variant: str = "projection"
    n_classes: int = 8
    data_dim: int = 2                 # vector kind
    image_channels: int = 3
    image_size: int = 16              # output size (image) or low-res size (superres)
    z_dim: int = 16
    g_width: int = 128
    d_width: int = 128
    g_layers: int = 2                 # vector generator hidden layers
    d_layers: int = 3                 # vector discriminator trunk blocks
    d_down: tuple = (1, 1, 0)         # image discriminator: downsample flag per block
    embed_dim: int = 128              # concat embedding width
    hidden_index: int = -2            # concat_hidden insertion block (python index); -2 = penultimate
    spectral_norm: bool = True
    sn_embedding: bool = True
    sr_factor: int = 4
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown discriminator variant {self.variant!r}")
        self.d_down = tuple(int(v) for v in self.d_down)


# -- heads --------------------------------------------------------------------

def projection_logit(phi: Tensor, y, V: Tensor, psi) -> Tensor:
    """y^T V phi + psi(phi), batched over rows of ``phi``.

    ``y`` holds integer labels or one-hot/mixture rows; ``psi`` maps [N, d] to [N, 1].
    """
    single = phi.ndim == 1
    if single:
        phi = T.reshape(phi, (1, -1))
    if phi.shape[1] != V.shape[1]:
        raise T.DimensionError(f"feature dim {phi.shape[1]} vs embedding dim {V.shape[1]}")
    e = embed(y, V)
    if e.ndim == 1:
        e = T.reshape(e, (1, -1))
    out = T.reshape(psi(phi), (-1,)) + T.tsum(e * phi, 1)
    return T.reshape(out, ()) if single else out


def acgan_heads(phi: Tensor, adv_head, class_head):
    return T.reshape(adv_head(phi), (-1,)), class_head(phi)


# -- discriminators ---------------------------------------------------------------

class Discriminator(Module):
    """Trunk of blocks, pooling, and one of the conditioning heads."""

    def __init__(self, rng: T.Rng, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.variant = spec.variant
        self.n_classes = spec.n_classes
        sn = spec.spectral_norm
        self.spatial = spec.kind == "image"
        e = spec.embed_dim
        if self.spatial:
            widths = [spec.d_width] * len(spec.d_down)
            c_in = spec.image_channels
        else:
            widths = [spec.d_width] * spec.d_layers
            c_in = spec.data_dim
        n_blocks = len(widths)
        self.hidden_index = spec.hidden_index % n_blocks if n_blocks > 1 else 0
        if self.variant == "concat_hidden" and self.hidden_index >= n_blocks - 1:
            raise ValueError("concat_hidden needs a block after the insertion point")
        blocks = []
        for i, w in enumerate(widths):
            extra = 0
            if self.variant == "concat_input" and i == 0:
                extra = e
            if self.variant == "concat_hidden" and i == self.hidden_index + 1:
                extra = e
            if self.spatial:
                blocks.append(DisBlock(rng, c_in + extra, w, downsample=bool(spec.d_down[i]),
                                       first=(i == 0), spectral_norm=sn))
            else:
                blocks.append(DenseBlock(rng, c_in + extra, w, spectral_norm=sn))
            c_in = w
        self.blocks = blocks
        self.feature_dim = c_in
        if self.variant.startswith("concat"):
            self.cond_embed = Embedding(rng, spec.n_classes, e, spectral_norm=sn and spec.sn_embedding)
        psi_in = c_in + (e if self.variant == "concat_output" else 0)
        self.psi = Linear(rng, psi_in, 1, spectral_norm=sn)
        if self.variant == "projection":
            self.embed = Embedding(rng, spec.n_classes, c_in, spectral_norm=sn and spec.sn_embedding)
        if self.variant == "acgan":
            self.classifier = Linear(rng, c_in, spec.n_classes, spectral_norm=sn)

    def _replicated(self, y, like: Tensor) -> Tensor:
        emb = self.cond_embed(y)
        if like.ndim == 2:
            return emb
        n, _, h, w = like.shape
        emb = T.reshape(emb, (n, emb.shape[1], 1, 1))
        return T.broadcast_to(emb, (n, emb.shape[1], h, w))

    def features(self, x: Tensor, y=None) -> Tensor:
        h = x
        if self.variant == "concat_input":
            h = T.concat([h, self._replicated(y, h)], axis=1)
        for i, block in enumerate(self.blocks):
            h = block(h)
            if self.variant == "concat_hidden" and i == self.hidden_index:
                h = T.concat([h, self._replicated(y, h)], axis=1)
        if self.spatial:
            h = T.global_sum_pool(T.relu(h))
        return h

    def forward(self, x: Tensor, y):
        """Adversarial logits [N]; for ``acgan`` a tuple (logits, class logits)."""
        phi = self.features(x, y)
        if self.variant == "projection":
            return projection_logit(phi, y, self.embed.effective_weight(), self.psi)
        if self.variant == "acgan":
            return acgan_heads(phi, self.psi, self.classifier)
        if self.variant == "concat_output":
            phi = T.concat([phi, self.cond_embed(y)], axis=1)
        return T.reshape(self.psi(phi), (-1,))


def concat_discriminator(x: Tensor, y, D: Discriminator) -> Tensor:
    if not D.variant.startswith("concat"):
        raise ValueError(f"not a concat variant: {D.variant}")
    return D(x, y)


# -- generators -------------------------------------------------------------------

class VectorGenerator(Module):
    """MLP generator with conditional BN; linear output for unbounded data."""

    def __init__(self, rng: T.Rng, spec: ModelSpec):
        super().__init__()
        self.n_classes = spec.n_classes
        self.z_dim = spec.z_dim
        dims = [spec.z_dim] + [spec.g_width] * spec.g_layers
        self.fcs = [Linear(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
        self.bns = [CondBatchNorm(b, spec.n_classes) for b in dims[1:]]
        self.out = Linear(rng, dims[-1], spec.data_dim)

    def forward(self, z: Tensor, y=None, mix=None) -> Tensor:
        h = z
        for fc, bn in zip(self.fcs, self.bns):
            h = T.relu(bn(fc(h), y, mix))
        return self.out(h)


class ImageGenerator(Module):
    """z -> linear -> 4x4 seed -> up ResBlocks (CBN) -> BN -> relu -> conv -> tanh."""

    def __init__(self, rng: T.Rng, spec: ModelSpec, bottom: int = 4):
        super().__init__()
        self.n_classes = spec.n_classes
        self.z_dim = spec.z_dim
        self.bottom = bottom
        ch = spec.g_width
        n_up = int(np.log2(spec.image_size // bottom))
        if bottom * 2**n_up != spec.image_size:
            raise ValueError(f"image size {spec.image_size} is not {bottom}*2^k")
        self.ch = ch
        self.l1 = Linear(rng, spec.z_dim, ch * bottom * bottom)
        self.blocks = [GenBlock(rng, ch, ch, spec.n_classes, upsample=True) for _ in range(n_up)]
        self.bn = BatchNorm(ch)
        self.conv = Conv2d(rng, ch, spec.image_channels)

    def forward(self, z: Tensor, y=None, mix=None) -> Tensor:
        h = T.reshape(self.l1(z), (z.shape[0], self.ch, self.bottom, self.bottom))
        for block in self.blocks:
            h = block(h, y, mix)
        return T.tanh(self.conv(T.relu(self.bn(h))))


def _check_labels(G, y):
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= G.n_classes):
        raise ValueError(f"class index out of range [0, {G.n_classes})")
    return y


def generator_forward(G: Module, z, y) -> Tensor:
    z = T.as_tensor(z)
    single = z.ndim == 1
    if single:
        z = T.reshape(z, (1, -1))
    y = _check_labels(G, np.atleast_1d(y))
    if y.size == 1 and z.shape[0] > 1:
        y = np.repeat(y, z.shape[0])
    out = G(z, y)
    return T.reshape(out, out.shape[1:]) if single else out


def morph_generator(G: Module, z, y1, y2, lam: float) -> Tensor:
    """Generate with every CBN row mixed as (1-lam)*row[y1] + lam*row[y2]."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixing coefficient {lam} outside [0, 1]")
    z = T.as_tensor(z)
    single = z.ndim == 1
    if single:
        z = T.reshape(z, (1, -1))
    n = z.shape[0]
    y1 = np.broadcast_to(_check_labels(G, np.atleast_1d(y1)), (n,))
    y2 = np.broadcast_to(_check_labels(G, np.atleast_1d(y2)), (n,))
    out = G(z, mix=(y1, y2, lam))
    return T.reshape(out, out.shape[1:]) if single else out


# -- super-resolution -------------------------------------------------------------

def replicate(z: Tensor, h: int, w: int) -> Tensor:
    n, d = z.shape
    return T.broadcast_to(T.reshape(z, (n, d, 1, 1)), (n, d, h, w))


class SRGenerator(Module):
    """Low-res image + z -> high-res image through upsampling ResBlocks.

    z is spatially replicated and concatenated ahead of the first conv of
    every block. With ``skip`` the blocks predict a correction on top of a
    bilinear upsample of the input; that base is a constant of the input, so
    gradients reach ``y_lo`` only through the stem conv.
    """

    def __init__(self, rng: T.Rng, spec: ModelSpec):
        super().__init__()
        ch = spec.g_width
        self.z_dim = spec.z_dim
        self.low = spec.image_size
        self.factor = spec.sr_factor
        n_up = int(np.log2(spec.sr_factor))
        self.skip = bool(spec.extras.get("sr_skip", True))
        self.stem = Conv2d(rng, spec.image_channels, ch)
        self.blocks = [GenBlock(rng, ch, ch, 1, upsample=True, extra_in=spec.z_dim)
                       for _ in range(n_up)]
        self.bn = BatchNorm(ch)
        self.conv = Conv2d(rng, ch, spec.image_channels, init_scale=0.1 if self.skip else 1.0)

    def forward(self, z: Tensor, y_lo: Tensor) -> Tensor:
        y_lo = T.as_tensor(y_lo)
        if y_lo.shape[-1] != self.low or y_lo.shape[-2] != self.low:
            raise T.DimensionError(f"low-res input must be {self.low}x{self.low}, got {y_lo.shape}")
        h = self.stem(y_lo)
        for block in self.blocks:
            s = h.shape[-1] * 2
            h = block(h, extra=replicate(z, s, s))
        r = self.conv(T.relu(self.bn(h)))
        if self.skip:
            from .resize import upsample_bilinear

            base = np.clip(upsample_bilinear(y_lo.data, self.factor), -0.999, 0.999)
            r = r + Tensor(np.arctanh(base), dtype=r.dtype)
        return T.tanh(r)


def sr_generator_forward(G: SRGenerator, z, y_lo) -> Tensor:
    return G(T.as_tensor(z), T.as_tensor(y_lo))


def sr_projection_logit(phi_map: Tensor, y_lo, V_kernel: Conv2d, psi) -> Tensor:
    """sum_{ijk} y_ijk (V * phi)_ijk + psi(phi), batched over N."""
    F = V_kernel(phi_map)
    y_lo = T.as_tensor(y_lo)
    if F.shape != y_lo.shape:
        raise T.DimensionError(f"projected map {F.shape} vs condition {y_lo.shape}")
    inner = T.tsum(F * y_lo, (1, 2, 3))
    return T.reshape(psi(phi_map), (-1,)) + inner


class SRDiscriminator(Module):
    """Trunk down to the low-res grid, spatial projection there, then psi.

    ``variant`` is ``projection`` or ``concat`` (y_lo appended to the trunk
    output in place of the projection module).
    """

    def __init__(self, rng: T.Rng, spec: ModelSpec):
        super().__init__()
        ch = spec.d_width
        sn = spec.spectral_norm
        self.variant = "projection" if spec.variant == "projection" else "concat"
        n_down = int(np.log2(spec.sr_factor))
        c_in = spec.image_channels
        self.trunk = []
        for i in range(n_down):
            self.trunk.append(DisBlock(rng, c_in, ch, downsample=True, first=(i == 0),
                                       spectral_norm=sn))
            c_in = ch
        extra = spec.image_channels if self.variant == "concat" else 0
        self.head = [DisBlock(rng, ch + extra, ch, downsample=True, spectral_norm=sn),
                     DisBlock(rng, ch, ch, downsample=False, spectral_norm=sn)]
        self.psi_fc = Linear(rng, ch, 1, spectral_norm=sn)
        if self.variant == "projection":
            self.V = Conv2d(rng, ch, spec.image_channels, k=3, bias=False,
                            spectral_norm=sn and spec.sn_embedding)

    def psi(self, phi_map: Tensor) -> Tensor:
        h = phi_map
        for block in self.head:
            h = block(h)
        return self.psi_fc(T.global_sum_pool(T.relu(h)))

    def phi(self, x_hi: Tensor) -> Tensor:
        h = x_hi
        for block in self.trunk:
            h = block(h)
        return h

    def forward(self, x_hi: Tensor, y_lo) -> Tensor:
        phi = self.phi(x_hi)
        if self.variant == "projection":
            return sr_projection_logit(phi, y_lo, self.V, self.psi)
        phi = T.concat([phi, T.as_tensor(y_lo)], axis=1)
        return T.reshape(self.psi(phi), (-1,))


# -- builders -----------------------------------------------------------------------

def build_generator(rng: T.Rng, spec: ModelSpec) -> Module:
    if spec.kind == "vector":
        return VectorGenerator(rng, spec)
    if spec.kind == "image":
        return ImageGenerator(rng, spec)
    if spec.kind == "superres":
        return SRGenerator(rng, spec)
    raise ValueError(f"unknown model kind {spec.kind!r}")


def build_discriminator(rng: T.Rng, spec: ModelSpec) -> Module:
    if spec.kind == "superres":
        return SRDiscriminator(rng, spec)
    return Discriminator(rng, spec)
