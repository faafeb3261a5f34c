"""Parameterized layers: linear, conv, embedding, (conditional) batch norm,
spectral normalization and the generator/discriminator ResBlocks."""

from __future__ import annotations

import warnings
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Module:
    """Tiny module base: attribute-discovered parameters, buffers and children."""

    def __init__(self):
        self.training = True
        self._buffers: list[str] = []

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        setattr(self, name, value)
        if name not in self._buffers:
            self._buffers.append(name)

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.op == "leaf":
                yield prefix + name, val
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {n: p.data for n, p in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        for name, p in params.items():
            if name not in state:
                raise KeyError(f"missing parameter {name}")
            if state[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {state[name].shape} vs {p.shape}")
            p.data = np.array(state[name], dtype=p.data.dtype)
        self._load_buffers(state, "")

    def _load_buffers(self, state, prefix):
        for name in self._buffers:
            key = prefix + name
            if key not in state:
                raise KeyError(f"missing buffer {key}")
            cur = getattr(self, name)
            setattr(self, name, np.array(state[key], dtype=cur.dtype).reshape(cur.shape))
        for name, child in self.children():
            child._load_buffers(state, f"{prefix}{name}.")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype):
        for name in self._buffers:
            setattr(self, name, getattr(self, name).astype(dtype))
        for _, child in self.children():
            child._cast_buffers(dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=data.dtype)


def he_uniform(rng: T.Rng, shape, fan_in: int) -> np.ndarray:
    """Zero-mean uniform with std sqrt(2/fan_in)."""
    bound = np.sqrt(3.0) * np.sqrt(2.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


def _unit(x: np.ndarray) -> np.ndarray:
    n = float(np.sqrt(x @ x))
    return x / max(n, 1e-12)


def power_iteration(w: np.ndarray, u: np.ndarray, n_iter: int = 1):
    """Run ``n_iter`` power-iteration steps on w viewed as (rows, -1).

    Returns (u, v, sigma_hat).
    """
    wm = w.reshape(w.shape[0], -1)
    v = None
    for _ in range(max(n_iter, 1)):
        v = _unit(wm.T @ u)
        u = _unit(wm @ v)
    sigma = float(u @ wm @ v)
    return u, v, sigma


class SpectralNormMixin:
    """Shared spectral-normalization state for weight-bearing layers.

    The persistent ``u`` estimate is refined by one power-iteration step per
    training-mode forward call. In eval mode it is left untouched, which also
    makes finite-difference checks well defined.
    """

    spectral_norm: bool
    weight: Tensor
    n_power_iter = 1

    def _init_sn(self, rng: T.Rng, spectral_norm: bool):
        self.spectral_norm = spectral_norm
        if spectral_norm:
            rows = self.weight.shape[0]
            u = _unit(rng.normal((rows,), dtype=np.float64))
            self.register_buffer("u", u.astype(self.weight.dtype))
            self.register_buffer("sigma", np.zeros((1,), dtype=self.weight.dtype))

    def effective_weight(self) -> Tensor:
        if not self.spectral_norm:
            return self.weight
        w = self.weight.data
        u = self.u.astype(w.dtype)
        if self.training:
            u, v, _ = power_iteration(w, u, self.n_power_iter)
            self.u = u.astype(w.dtype)
        else:
            v = _unit(w.reshape(w.shape[0], -1).T @ u)
        out, sigma = T.spectral_scale(self.weight, u, v)
        self.sigma = np.array([sigma], dtype=w.dtype)
        return out


def spectral_normalize(layer: SpectralNormMixin, n_iter: int = 1) -> Tensor:
    """Advance the layer's power iteration ``n_iter`` steps and return W / sigma_hat."""
    w = layer.weight.data
    u, v, sigma = power_iteration(w, layer.u, n_iter)
    if sigma < 1e-12:
        warnings.warn("zero weight matrix in spectral normalization", RuntimeWarning, stacklevel=2)
    layer.u = u.astype(w.dtype)
    out, sigma = T.spectral_scale(layer.weight, u, v)
    layer.sigma = np.array([sigma], dtype=w.dtype)
    return out


class Linear(Module, SpectralNormMixin):
    def __init__(self, rng: T.Rng, n_in: int, n_out: int, bias: bool = True,
                 spectral_norm: bool = False, init_scale: float = 1.0):
        super().__init__()
        self.weight = param(he_uniform(rng, (n_out, n_in), n_in) * init_scale)
        self.bias = param(np.zeros((n_out,), dtype=self.weight.dtype)) if bias else None
        self._init_sn(rng, spectral_norm)

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.effective_weight(), self.bias)


class Conv2d(Module, SpectralNormMixin):
    def __init__(self, rng: T.Rng, c_in: int, c_out: int, k: int = 3, pad: int | None = None,
                 stride: int = 1, bias: bool = True, spectral_norm: bool = False,
                 init_scale: float = 1.0):
        super().__init__()
        fan_in = c_in * k * k
        self.weight = param(he_uniform(rng, (c_out, c_in, k, k), fan_in) * init_scale)
        self.bias = param(np.zeros((c_out,), dtype=self.weight.dtype)) if bias else None
        self.pad = k // 2 if pad is None else pad
        self.stride = stride
        self._init_sn(rng, spectral_norm)

    def forward(self, x: Tensor) -> Tensor:
        out = T.conv2d(x, self.effective_weight(), self.stride, self.pad)
        if self.bias is not None:
            out = out + T.reshape(self.bias, (1, -1, 1, 1))
        return out


class Embedding(Module, SpectralNormMixin):
    """Class embedding matrix V[C, d]; rows are looked up via y^T V."""

    def __init__(self, rng: T.Rng, n_classes: int, dim: int, spectral_norm: bool = False):
        super().__init__()
        bound = np.sqrt(3.0) / np.sqrt(dim)
        self.weight = param(rng.uniform(-bound, bound, (n_classes, dim)))
        self._init_sn(rng, spectral_norm)

    def forward(self, y) -> Tensor:
        """``y``: integer labels [N] or one-hot/mixture rows [N, C]."""
        return embed(y, self.effective_weight())


def one_hot(labels, n_classes: int, dtype=None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    out = np.zeros((labels.size, n_classes), dtype=dtype or T.get_default_dtype())
    out[np.arange(labels.size), labels] = 1
    return out


def embed(y, V: Tensor) -> Tensor:
    """y^T V for one-hot (or mixed) rows y; integer labels are one-hot encoded."""
    y = y.data if isinstance(y, Tensor) else np.asarray(y)
    if y.ndim == 1 and np.issubdtype(y.dtype, np.integer):
        y = one_hot(y, V.shape[0], dtype=V.dtype)
    y = np.asarray(y, dtype=V.dtype)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[None]
    if y.shape[-1] != V.shape[0]:
        raise T.DimensionError(f"condition length {y.shape[-1]} vs embedding rows {V.shape[0]}")
    out = T.matmul(Tensor(y, dtype=V.dtype), V)
    return T.reshape(out, (V.shape[1],)) if squeeze else out


def _stat_axes(x: Tensor):
    return (0,) if x.ndim == 2 else (0, 2, 3)


def _per_channel(v: Tensor, ndim: int) -> Tensor:
    # [N, C] scale/shift -> broadcastable against [N, C] or [N, C, H, W]
    return v if ndim == 2 else T.reshape(v, (v.shape[0], v.shape[1], 1, 1))


class BatchNorm(Module):
    """Batch norm over [N, C] or [N, C, H, W] with a single affine row."""

    def __init__(self, n_channels: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM,
                 dtype=None):
        super().__init__()
        dtype = dtype or T.get_default_dtype()
        self.eps = eps
        self.momentum = momentum
        self.gamma = param(np.ones((n_channels,), dtype=dtype))
        self.beta = param(np.zeros((n_channels,), dtype=dtype))
        self.register_buffer("running_mean", np.zeros((n_channels,), dtype=dtype))
        self.register_buffer("running_var", np.ones((n_channels,), dtype=dtype))

    def _normalize(self, h: Tensor) -> Tensor:
        if h.shape[0] == 0:
            raise ValueError("batch norm on an empty batch")
        if self.training:
            xhat, mu, var, m = T.standardize(h, _stat_axes(h), self.eps)
            unbiased = var * m / max(m - 1, 1)
            k = self.momentum
            self.running_mean = ((1 - k) * self.running_mean + k * mu).astype(self.running_mean.dtype)
            self.running_var = ((1 - k) * self.running_var + k * unbiased).astype(self.running_var.dtype)
            return xhat
        shape = (1, -1) if h.ndim == 2 else (1, -1, 1, 1)
        mu = self.running_mean.reshape(shape)
        inv = 1.0 / np.sqrt(self.running_var.reshape(shape) + self.eps)
        return (h - Tensor(mu, dtype=h.dtype)) * Tensor(inv, dtype=h.dtype)

    def forward(self, h: Tensor) -> Tensor:
        xhat = self._normalize(h)
        shape = (1, -1) if h.ndim == 2 else (1, -1, 1, 1)
        return xhat * T.reshape(self.gamma, shape) + T.reshape(self.beta, shape)


class CondBatchNorm(BatchNorm):
    """Batch norm whose scale/shift rows are selected per sample by class."""

    def __init__(self, n_channels: int, n_classes: int, eps: float = BN_EPS,
                 momentum: float = BN_MOMENTUM, dtype=None):
        super().__init__(n_channels, eps, momentum, dtype)
        dtype = self.gamma.dtype
        del self.gamma, self.beta
        self.n_classes = n_classes
        self.gamma_table = param(np.ones((n_classes, n_channels), dtype=dtype))
        self.beta_table = param(np.zeros((n_classes, n_channels), dtype=dtype))

    def forward(self, h: Tensor, y=None, mix=None) -> Tensor:
        """``y``: class indices [N]. ``mix``: (y1, y2, lam) morphing triple instead of ``y``."""
        xhat = self._normalize(h)
        if mix is not None:
            y1, y2, lam = mix
            y1 = np.asarray(y1, dtype=np.int64)
            y2 = np.asarray(y2, dtype=np.int64)
            gamma = (T.take_rows(self.gamma_table, y1) * (1.0 - lam)
                     + T.take_rows(self.gamma_table, y2) * lam)
            beta = (T.take_rows(self.beta_table, y1) * (1.0 - lam)
                    + T.take_rows(self.beta_table, y2) * lam)
        else:
            y = np.asarray(y, dtype=np.int64)
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise ValueError(f"class index out of range [0, {self.n_classes})")
            gamma = T.take_rows(self.gamma_table, y)
            beta = T.take_rows(self.beta_table, y)
        return xhat * _per_channel(gamma, h.ndim) + _per_channel(beta, h.ndim)


def cond_batch_norm(layer: CondBatchNorm, h: Tensor, y, train_mode: bool = True) -> Tensor:
    layer.train(train_mode)
    return layer(h, y)


# -- residual blocks ------------------------------------------------------------

def _shortcut_flag(c_in: int, c_out: int, resample: bool, requested: bool | None) -> bool:
    if requested is None:
        return c_in != c_out or resample
    if not requested and c_in != c_out:
        raise ValueError(f"identity shortcut cannot map {c_in} to {c_out} channels")
    return requested


class GenBlock(Module):
    """(C)BN -> relu -> [upsample] -> conv -> (C)BN -> relu -> conv, plus shortcut.

    The shortcut is identity unless channels change or upsampling happens, in
    which case it is upsample -> 1x1 conv.
    """

    def __init__(self, rng: T.Rng, c_in: int, c_out: int, n_classes: int = 1,
                 upsample: bool = True, extra_in: int = 0, shortcut: bool | None = None):
        super().__init__()
        self.upsample = upsample
        self.conditional = n_classes > 1
        dtype = T.get_default_dtype()
        norm = (lambda c: CondBatchNorm(c, n_classes, dtype=dtype)) if self.conditional else (
            lambda c: BatchNorm(c, dtype=dtype))
        self.bn1 = norm(c_in)
        self.conv1 = Conv2d(rng, c_in + extra_in, c_out)
        self.bn2 = norm(c_out)
        self.conv2 = Conv2d(rng, c_out, c_out)
        self.learnable_sc = _shortcut_flag(c_in, c_out, upsample, shortcut)
        self.sc = Conv2d(rng, c_in, c_out, k=1, pad=0) if self.learnable_sc else None

    def _bn(self, bn, h, y, mix):
        return bn(h, y, mix) if self.conditional else bn(h)

    def forward(self, h: Tensor, y=None, mix=None, extra: Tensor | None = None) -> Tensor:
        r = T.relu(self._bn(self.bn1, h, y, mix))
        if self.upsample:
            r = T.upsample_nearest2x(r)
        if extra is not None:
            r = T.concat([r, extra], axis=1)
        r = self.conv1(r)
        r = T.relu(self._bn(self.bn2, r, y, mix))
        r = self.conv2(r)
        return r + self.shortcut(h)

    def shortcut(self, h: Tensor) -> Tensor:
        if self.upsample:
            h = T.upsample_nearest2x(h)
        return self.sc(h) if self.sc is not None else h


class DisBlock(Module):
    """relu -> conv -> relu -> conv -> [avg pool], plus shortcut.

    ``first`` drops the leading relu since the block sees the raw input. The
    shortcut is 1x1 conv followed by pooling when shapes change.
    """

    def __init__(self, rng: T.Rng, c_in: int, c_out: int, downsample: bool = True,
                 first: bool = False, spectral_norm: bool = True, shortcut: bool | None = None):
        super().__init__()
        self.downsample = downsample
        self.first = first
        self.conv1 = Conv2d(rng, c_in, c_out, spectral_norm=spectral_norm)
        self.conv2 = Conv2d(rng, c_out, c_out, spectral_norm=spectral_norm)
        self.learnable_sc = _shortcut_flag(c_in, c_out, downsample, shortcut)
        self.sc = (Conv2d(rng, c_in, c_out, k=1, pad=0, spectral_norm=spectral_norm)
                   if self.learnable_sc else None)

    def forward(self, h: Tensor) -> Tensor:
        r = h if self.first else T.relu(h)
        r = self.conv2(T.relu(self.conv1(r)))
        if self.downsample:
            r = T.avg_pool2x2(r)
        return r + self.shortcut(h)

    def shortcut(self, h: Tensor) -> Tensor:
        if self.sc is not None:
            h = self.sc(h)
        return T.avg_pool2x2(h) if self.downsample else h


class DenseBlock(Module):
    """Linear -> relu; the vector-data analogue of a discriminator block."""

    def __init__(self, rng: T.Rng, n_in: int, n_out: int, spectral_norm: bool = True):
        super().__init__()
        self.fc = Linear(rng, n_in, n_out, spectral_norm=spectral_norm)

    def forward(self, h: Tensor) -> Tensor:
        return T.relu(self.fc(h))


def resblock_forward(block: Module, h: Tensor, *args, **kwargs) -> Tensor:
    return block(h, *args, **kwargs)
