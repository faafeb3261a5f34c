"""Minimal n-dimensional tensor with reverse-mode automatic differentiation.

Each op records its parents and a closure that maps the output gradient to
parent gradients. ``backward`` walks the recorded graph in reverse
topological order. Data lives in plain numpy arrays, so the engine is only
as general as the op set below: what the GAN architectures in this package
need, and nothing more.
"""

from __future__ import annotations

import contextlib
import json
import struct
from typing import BinaryIO, Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
_DEFAULT_DTYPE = np.float32
_DEBUG_FINITE = False


class DimensionError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def debug_finite(enabled: bool = True):
    """Raise if any forward op turns finite inputs into NaN/Inf."""
    global _DEBUG_FINITE
    prev = _DEBUG_FINITE
    _DEBUG_FINITE = enabled
    try:
        yield
    finally:
        _DEBUG_FINITE = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, inputs: Sequence["Tensor"] | None = None):
        return backward(self, inputs)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype), dtype=like.data.dtype)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    if _DEBUG_FINITE and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise FloatingPointError(f"op {op} produced non-finite values from finite inputs")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- graph traversal --------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` with every node after all its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor, inputs: Sequence[Tensor] | None = None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    When ``inputs`` is given, returns their gradients as a list, with zeros
    for inputs that the loss does not depend on.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if inputs is None:
        return None
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g * b.data, sa), _unbroadcast(g * a.data, sb)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, sa), _unbroadcast(-ga * a.data / b.data, sb)

    return _make(a.data / b.data, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, p: float) -> Tensor:
    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return _make(a.data**p, (a,), bw, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def maximum_const(a: Tensor, c: float) -> Tensor:
    """max(a, c); the subgradient at a == c is taken as 0."""
    mask = a.data > c
    out = np.where(mask, a.data, np.asarray(c, dtype=a.dtype))
    return _make(out, (a,), lambda g: (g * mask,), "max_const")


def sigmoid(a: Tensor) -> Tensor:
    out = _np_sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(a)) without overflow for large |a|."""
    x = a.data
    out = np.minimum(x, 0) - np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * _np_sigmoid(-x),), "log_sigmoid")


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bw, "log_softmax")


# -- reductions & shape -----------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def broadcast_to(a: Tensor, shape) -> Tensor:
    src = a.shape
    out = np.broadcast_to(a.data, shape).copy()
    return _make(out, (a,), lambda g: (_unbroadcast(g, src),), "broadcast")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def take_rows(table: Tensor, idx) -> Tensor:
    """Gather ``table[idx]`` along the first axis."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = table.shape

    def bw(g):
        if idx.ndim == 1 and len(shape) == 2:
            sel = np.zeros((idx.size, shape[0]), dtype=g.dtype)
            sel[np.arange(idx.size), idx] = 1
            return (sel.T @ g,)
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _make(table.data[idx], (table,), bw, "take_rows")


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} x {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w.T (+ b) for x[N, in], w[out, in], b[out]."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear shape mismatch: x {x.shape}, w {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out += b.data

    def bw(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        gb = g.sum(axis=0) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw, "linear")


def spectral_scale(w: Tensor, u: np.ndarray, v: np.ndarray) -> tuple[Tensor, float]:
    """W / sigma with sigma = u^T W v, u and v held constant.

    ``w`` may have any rank; it is viewed as (shape[0], -1) for sigma.
    Returns (normalized weight, sigma as float).
    """
    wm = w.data.reshape(w.shape[0], -1)
    sigma = float(u @ wm @ v)
    if sigma < 1e-12:
        import warnings

        warnings.warn("spectral norm estimate near zero; clamping", RuntimeWarning, stacklevel=2)
        sigma = 1e-12
    out = w.data / np.asarray(sigma, dtype=w.dtype)

    def bw(g):
        # d(W/s)/dW with ds/dW = u v^T
        uv = np.outer(u, v).reshape(w.shape).astype(w.dtype)
        return ((g - np.sum(g * out) * uv) / sigma,)

    return _make(out, (w,), bw, "spectral_scale"), sigma



# -- convolution & resampling ---------------------------------------------

def _conv_out(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0 or span % stride:
        raise DimensionError(
            f"conv extent {n} with kernel {k}, stride {stride}, pad {pad} is not integral"
        )
    return span // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Patch matrix [N*ho*wo, kh*kw*C] from a padded NCHW array (channels innermost)."""
    n, c = xp.shape[:2]
    xl = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    win = np.lib.stride_tricks.sliding_window_view(xl, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :ho, :wo]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)


def _kernel_rows(w: np.ndarray) -> np.ndarray:
    # [O,C,kh,kw] -> [O, kh*kw*C] matching the _im2col column order
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of x[N,C,H,W] with w[O,C,kh,kw]."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = _conv_out(h, kh, stride, pad)
    wo = _conv_out(wd, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = _kernel_rows(w.data)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    xshape = xp.shape

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = None
        if w.requires_grad:
            gw = (g2.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
        gx = None
        if x.requires_grad and stride == 1:
            # full correlation of g with the flipped, channel-swapped kernel
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            wf = _kernel_rows(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            hp, wp = xshape[2], xshape[3]
            gxp = (_im2col(gp, kh, kw, 1, hp, wp) @ wf.T).reshape(n, hp, wp, c)
            gxp = gxp.transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        elif x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, kh, kw, c)
            gxp = np.zeros(xshape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        dcols[:, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        return gx, gw

    return _make(np.ascontiguousarray(out), (x, w), bw, "conv2d")


def global_sum_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C] by summing over space."""
    return tsum(x, (2, 3))


def avg_pool2x2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2x2 needs even extents, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return _make(out, (x,), bw, "avg_pool2x2")


def upsample_nearest2x(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest2x needs a 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(out, (x,), bw, "upsample2x")


# -- normalization ------------------------------------------------------------

def standardize(x: Tensor, axes, eps: float):
    """(x - mean) / sqrt(var + eps) over ``axes`` with biased variance.

    Returns the standardized tensor plus the batch mean and variance (numpy)
    so callers can update running statistics.
    """
    axes = _norm_axes(axes, x.ndim)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    m = int(np.prod([x.shape[i] for i in axes]))

    def bw(g):
        gm = g.mean(axis=axes, keepdims=True)
        gx = (g - gm - xhat * (g * xhat).mean(axis=axes, keepdims=True)) * inv
        return (gx,)

    out = _make(xhat.astype(x.dtype, copy=False), (x,), bw, "standardize")
    return out, mu.reshape(-1), var.reshape(-1), m


# -- random numbers -------------------------------------------------------------

class Rng:
    """Seeded PCG64 stream; state round-trips through ``state_blob``."""

    algorithm = "PCG64"

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, dtype=None) -> np.ndarray:
        return self.gen.standard_normal(shape).astype(dtype or _DEFAULT_DTYPE)

    def uniform(self, lo, hi, shape, dtype=None) -> np.ndarray:
        if lo > hi:
            raise ValueError(f"uniform bounds reversed: {lo} > {hi}")
        return self.gen.uniform(lo, hi, shape).astype(dtype or _DEFAULT_DTYPE)

    def integers(self, lo, hi, shape) -> np.ndarray:
        return self.gen.integers(lo, hi, shape)

    def spawn(self, key: int) -> "Rng":
        """Independent stream derived from (seed, key) without touching this one."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child.gen = np.random.Generator(np.random.PCG64([self.seed, int(key)]))
        return child

    def state_blob(self) -> bytes:
        state = self.gen.bit_generator.state
        return json.dumps({"seed": self.seed, "state": state}, sort_keys=True).encode()

    @classmethod
    def from_blob(cls, blob: bytes) -> "Rng":
        d = json.loads(blob.decode())
        rng = cls(d["seed"])
        rng.gen.bit_generator.state = d["state"]
        return rng


def sample_gaussian(rng: Rng, shape, requires_grad: bool = False) -> Tensor:
    return Tensor(rng.normal(shape), requires_grad=requires_grad)


def sample_uniform(rng: Rng, lo: float, hi: float, shape) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape))


# -- serialization --------------------------------------------------------------

def write_tensor(f: BinaryIO, arr) -> None:
    """rank (u32), extents (u32 each), then little-endian float32 values."""
    a = np.asarray(arr.data if isinstance(arr, Tensor) else arr)
    f.write(struct.pack("<I", a.ndim))
    f.write(struct.pack(f"<{a.ndim}I", *a.shape))
    f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_tensor(f: BinaryIO) -> np.ndarray:
    head = f.read(4)
    if len(head) < 4:
        raise EOFError("truncated tensor header")
    (rank,) = struct.unpack("<I", head)
    shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
    count = int(np.prod(shape)) if rank else 1
    raw = f.read(4 * count)
    if len(raw) != 4 * count:
        raise EOFError("truncated tensor payload")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def parameters_grad(params: Iterable[Tensor]) -> list[np.ndarray]:
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
