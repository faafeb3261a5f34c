"""Finite-difference gradient checks at float64.

Elementary ops compare the full autodiff gradient against central
differences of every input entry. Assembled models compare a directional
derivative per parameter tensor (and per input), which keeps the cost linear
in the number of tensors instead of the number of scalars.
"""

import numpy as np
import pytest

from projcgan import tensor as T
from projcgan.layers import (BatchNorm, CondBatchNorm, Conv2d, DenseBlock, DisBlock, Embedding,
                             GenBlock, Linear, embed, power_iteration)
from projcgan.models import (ModelSpec, SRDiscriminator, SRGenerator, build_discriminator,
                             build_generator, morph_generator)
from projcgan.tensor import Rng, Tensor

from oracles import finite_diff_grad, rel_error

N_CONFIGS = 20
TOL = 1e-4
EPS = 1e-5


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.sign(x) * (margin + np.abs(x))


def check_op(fn, arrays, rng):
    """Full-gradient check of sum(fn(*inputs) * W) for fixed random W."""
    with T.default_dtype(np.float64):
        out_shape = fn(*[t64(a) for a in arrays]).shape
        W = rng.normal(size=out_shape)

        def scalar(*arrs):
            return float((fn(*[t64(a) for a in arrs]).data * W).sum())

        ts = [t64(a, True) for a in arrays]
        T.tsum(fn(*ts) * t64(W)).backward()
        fd = finite_diff_grad(scalar, [a.copy() for a in arrays], eps=EPS)
    return max(rel_error(t.grad if t.grad is not None else np.zeros_like(a), g)
               for t, a, g in zip(ts, arrays, fd))


# -- elementary ops --------------------------------------------------------------------

def _bshapes(rng):
    shape = tuple(rng.integers(1, 4, rng.integers(1, 4)))
    other = tuple(1 if rng.random() < 0.4 else s for s in shape)[rng.integers(0, len(shape)):]
    return (shape, other) if rng.random() < 0.5 else (other, shape)


def cfg_add(rng):
    a, b = _bshapes(rng)
    return T.add, [rng.normal(size=a), rng.normal(size=b)]


def cfg_sub(rng):
    a, b = _bshapes(rng)
    return T.sub, [rng.normal(size=a), rng.normal(size=b)]


def cfg_mul(rng):
    a, b = _bshapes(rng)
    return T.mul, [rng.normal(size=a), rng.normal(size=b)]


def cfg_div(rng):
    a, b = _bshapes(rng)
    return T.div, [rng.normal(size=a), away_from_zero(rng, b, 0.5)]


def cfg_neg(rng):
    return T.neg, [rng.normal(size=tuple(rng.integers(1, 5, 2)))]


def cfg_power(rng):
    p = float(rng.choice([2.0, 3.0, 0.5, -1.0, 1.7]))
    return (lambda x: T.power(x, p)), [rng.uniform(0.3, 2.0, size=tuple(rng.integers(1, 5, 2)))]


def cfg_exp(rng):
    return T.exp, [rng.normal(size=tuple(rng.integers(1, 5, 2)))]


def cfg_log(rng):
    return T.log, [rng.uniform(0.2, 3.0, size=tuple(rng.integers(1, 5, 2)))]


def cfg_sqrt(rng):
    return T.sqrt, [rng.uniform(0.2, 3.0, size=tuple(rng.integers(1, 5, 2)))]


def cfg_relu(rng):
    return T.relu, [away_from_zero(rng, tuple(rng.integers(1, 5, 2)))]


def cfg_maximum_const(rng):
    c = float(rng.normal())
    return (lambda x: T.maximum_const(x, c)), [c + away_from_zero(rng, tuple(rng.integers(1, 5, 2)))]


def cfg_sigmoid(rng):
    return T.sigmoid, [3 * rng.normal(size=tuple(rng.integers(1, 5, 2)))]


def cfg_tanh(rng):
    return T.tanh, [2 * rng.normal(size=tuple(rng.integers(1, 5, 2)))]


def cfg_log_sigmoid(rng):
    return T.log_sigmoid, [5 * rng.normal(size=tuple(rng.integers(1, 5, 2)))]


def cfg_log_softmax(rng):
    shape = tuple(rng.integers(2, 5, 2))
    axis = int(rng.integers(0, 2))
    return (lambda x: T.log_softmax(x, axis)), [2 * rng.normal(size=shape)]


def cfg_tsum(rng):
    shape = tuple(rng.integers(1, 4, 3))
    axis = [None, 0, 1, 2, (0, 2)][rng.integers(0, 5)]
    keep = bool(rng.integers(0, 2))
    return (lambda x: T.tsum(x, axis, keep)), [rng.normal(size=shape)]


def cfg_mean(rng):
    shape = tuple(rng.integers(1, 4, 3))
    axis = [None, 0, 1, 2, (1, 2)][rng.integers(0, 5)]
    keep = bool(rng.integers(0, 2))
    return (lambda x: T.mean(x, axis, keep)), [rng.normal(size=shape)]


def cfg_reshape(rng):
    a, b = rng.integers(1, 4, 2)
    return (lambda x: T.reshape(x, (b, -1))), [rng.normal(size=(a, b, 2))]


def cfg_transpose(rng):
    perm = tuple(rng.permutation(3))
    return (lambda x: T.transpose(x, perm)), [rng.normal(size=tuple(rng.integers(1, 4, 3)))]


def cfg_broadcast_to(rng):
    n = int(rng.integers(1, 4))
    return (lambda x: T.broadcast_to(x, (n, 3, 2))), [rng.normal(size=(1, 3, 1))]


def cfg_concat(rng):
    axis = int(rng.integers(0, 2))
    shapes = [[int(rng.integers(1, 4)), 3] for _ in range(3)]
    if axis == 1:
        shapes = [[2, s[0]] for s in shapes]
    return (lambda *xs: T.concat(list(xs), axis)), [rng.normal(size=s) for s in shapes]


def cfg_take_rows(rng):
    n, d = rng.integers(2, 5, 2)
    idx = rng.integers(0, n, rng.integers(1, 7))
    return (lambda t: T.take_rows(t, idx)), [rng.normal(size=(n, d))]


def cfg_matmul(rng):
    m, k, n = rng.integers(1, 5, 3)
    return T.matmul, [rng.normal(size=(m, k)), rng.normal(size=(k, n))]


def cfg_linear(rng):
    b, i, o = rng.integers(1, 5, 3)
    return T.linear, [rng.normal(size=(b, i)), rng.normal(size=(o, i)), rng.normal(size=o)]


def cfg_spectral_scale(rng):
    shape = tuple(rng.integers(2, 5, 2)) if rng.random() < 0.5 else (2, 2, 3, 3)
    w0 = rng.normal(size=shape)
    u, v, _ = power_iteration(w0, rng.normal(size=shape[0]), 3)
    return (lambda w: T.spectral_scale(w, u, v)[0]), [w0]


def cfg_conv2d(rng):
    n, c, o = rng.integers(1, 3, 3)
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    pad = int(rng.integers(0, 2)) if k == 3 else 0
    h = int(rng.choice([4, 5])) if stride == 1 else 5 if pad == 0 else 4
    h = h + (1 if stride == 2 and (h + 2 * pad - k) % 2 else 0)
    return ((lambda x, w: T.conv2d(x, w, stride, pad)),
            [rng.normal(size=(n, c, h, h)), rng.normal(size=(o, c, k, k))])


def cfg_global_sum_pool(rng):
    return T.global_sum_pool, [rng.normal(size=tuple(rng.integers(1, 4, 4)))]


def cfg_avg_pool2x2(rng):
    n, c = rng.integers(1, 3, 2)
    h, w = 2 * rng.integers(1, 4, 2)
    return T.avg_pool2x2, [rng.normal(size=(n, c, h, w))]


def cfg_upsample_nearest2x(rng):
    return T.upsample_nearest2x, [rng.normal(size=tuple(rng.integers(1, 4, 4)))]


def cfg_standardize(rng):
    shape = (int(rng.integers(2, 5)), int(rng.integers(1, 4))) if rng.random() < 0.5 else \
        (int(rng.integers(2, 4)), 2, 3, 2)
    axes = (0,) if len(shape) == 2 else (0, 2, 3)
    return (lambda x: T.standardize(x, axes, 1e-5)[0]), [rng.normal(size=shape)]


OPS = {name[4:]: fn for name, fn in globals().items() if name.startswith("cfg_")}


@pytest.mark.parametrize("op", sorted(OPS))
def test_op_gradient(op):
    rng = np.random.default_rng(sorted(OPS).index(op))
    errs = []
    for _ in range(N_CONFIGS):
        fn, arrays = OPS[op](rng)
        errs.append(check_op(fn, arrays, rng))
    assert len(errs) >= 20
    assert max(errs) <= TOL, f"{op}: worst relative error {max(errs):.2e}"


# -- layers and assembled models ----------------------------------------------------------

def directional_errors(loss_fn, tensors, rng):
    """Relative error of <grad, d> against central differences, one random d per tensor."""
    for t in tensors:
        t.grad = None
    loss, magnitude = loss_fn()
    grads = T.backward(loss, inputs=tensors)
    # central differences carry round-off of order 1e-11 * sum|terms|; the floor
    # keeps analytically zero gradients (biases feeding batch norm) from
    # dividing by that noise
    floor = 1e-6 * max(1.0, magnitude)
    errs = []
    for t, g in zip(tensors, grads):
        d = rng.normal(size=t.shape)
        ad = float((np.asarray(g) * d).sum())
        orig = t.data.copy()
        err = np.inf
        # a central difference that straddles a relu kink is wrong by O(1);
        # one retry at a tenth of the step moves off the kink
        for eps in (EPS, EPS / 10):
            t.data = orig + eps * d
            fp = loss_fn()[0].item()
            t.data = orig - eps * d
            fm = loss_fn()[0].item()
            t.data = orig
            fd = (fp - fm) / (2 * eps)
            err = min(err, abs(fd - ad) / max(abs(fd), abs(ad), floor))
            if err <= TOL:
                break
        errs.append(err)
    return errs


def weighted(out, W):
    """(sum(out * W), sum|out * W|); the second sets the round-off scale."""
    return T.tsum(out * t64(W)), float(np.abs(out.data * W).sum())


def randomize(module, rng, scale=0.3):
    """Perturb zero/one-initialized tables so every parameter carries signal."""
    for name, p in module.named_parameters():
        if name.endswith(("gamma_table", "gamma")):
            p.data = 1 + scale * rng.normal(size=p.shape)
        elif name.endswith(("beta_table", "beta", "bias")):
            p.data = scale * rng.normal(size=p.shape)


def image_spec(rng, kind, variant="projection"):
    return ModelSpec(kind=kind, variant=variant, n_classes=int(rng.integers(2, 5)),
                     image_size=8 if kind == "image" else 4, z_dim=int(rng.integers(2, 5)),
                     g_width=int(rng.integers(3, 6)), d_width=int(rng.integers(3, 6)),
                     embed_dim=int(rng.integers(2, 5)), d_down=(1, 1, 0),
                     spectral_norm=bool(rng.random() < 0.7), sr_factor=2,
                     hidden_index=int(rng.choice([-2, 0, 1])))


def vector_spec(rng, variant="projection"):
    return ModelSpec(kind="vector", variant=variant, n_classes=int(rng.integers(2, 5)),
                     z_dim=int(rng.integers(2, 5)), g_width=int(rng.integers(3, 7)),
                     d_width=int(rng.integers(3, 7)), embed_dim=int(rng.integers(2, 5)),
                     spectral_norm=bool(rng.random() < 0.7))


def run_discriminator(rng, spec):
    with T.default_dtype(np.float64):
        D = build_discriminator(Rng(int(rng.integers(1 << 30))), spec).eval()
    randomize(D, rng)
    B = int(rng.integers(2, 4))
    shape = (B, 2) if spec.kind == "vector" else (B, 3, spec.image_size, spec.image_size)
    x = t64(rng.normal(size=shape), True)
    y = rng.integers(0, spec.n_classes, B)
    W = rng.normal(size=B)
    Wc = rng.normal(size=(B, spec.n_classes))

    def loss():
        out = D(x, y)
        if spec.variant == "acgan":
            (a, ma), (b, mb) = weighted(out[0], W), weighted(out[1], Wc)
            return a + b, ma + mb
        return weighted(out, W)

    return directional_errors(loss, [x] + D.parameters(), rng)


def run_generator(rng, spec, morph=False):
    with T.default_dtype(np.float64):
        G = build_generator(Rng(int(rng.integers(1 << 30))), spec).train()
    randomize(G, rng)
    B = int(rng.integers(2, 4))
    z = t64(rng.normal(size=(B, spec.z_dim)), True)
    y = rng.integers(0, spec.n_classes, B)
    y2 = rng.integers(0, spec.n_classes, B)
    lam = float(rng.uniform())
    out_shape = G(z, y).shape
    W = rng.normal(size=out_shape)
    fwd = (lambda: morph_generator(G, z, y, y2, lam)) if morph else (lambda: G(z, y))
    return directional_errors(lambda: weighted(fwd(), W), [z] + G.parameters(), rng)


def run_sr_generator(rng):
    spec = image_spec(rng, "superres")
    skip = bool(rng.random() < 0.5)
    spec.extras["sr_skip"] = skip
    with T.default_dtype(np.float64):
        G = SRGenerator(Rng(int(rng.integers(1 << 30))), spec).train()
    randomize(G, rng)
    B = 2
    z = t64(rng.normal(size=(B, spec.z_dim)), True)
    y_lo = t64(rng.uniform(-0.9, 0.9, (B, 3, 4, 4)), True)
    W = rng.normal(size=(B, 3, 8, 8))
    # the skip path treats the low-res input as a constant
    inputs = [z] if skip else [z, y_lo]
    return directional_errors(lambda: weighted(G(z, y_lo), W), inputs + G.parameters(), rng)


def run_sr_discriminator(rng):
    spec = image_spec(rng, "superres")
    with T.default_dtype(np.float64):
        D = SRDiscriminator(Rng(int(rng.integers(1 << 30))), spec).eval()
    randomize(D, rng)
    x = t64(rng.normal(size=(2, 3, 8, 8)), True)
    y_lo = t64(rng.normal(size=(2, 3, 4, 4)), True)
    W = rng.normal(size=2)
    return directional_errors(lambda: weighted(D(x, y_lo), W), [x, y_lo] + D.parameters(), rng)


def run_layer(rng, kind):
    with T.default_dtype(np.float64):
        r = Rng(int(rng.integers(1 << 30)))
        c_in, c_out = rng.integers(2, 5, 2)
        B = int(rng.integers(2, 4))
        sn = bool(rng.random() < 0.5)
        y = rng.integers(0, 3, B)
        if kind == "linear":
            m = Linear(r, c_in, c_out, spectral_norm=sn)
            x_shape, call = (B, c_in), (lambda m, x: m(x))
        elif kind == "conv":
            m = Conv2d(r, c_in, c_out, k=3, pad=1, spectral_norm=sn)
            x_shape, call = (B, c_in, 4, 4), (lambda m, x: m(x))
        elif kind == "embedding":
            m = Embedding(r, 3, c_out, spectral_norm=sn)
            x_shape, call = (B, c_out), (lambda m, x: x * embed(y, m.effective_weight()))
        elif kind == "batchnorm":
            m = BatchNorm(c_in)
            x_shape, call = (B, c_in, 2, 3), (lambda m, x: m(x))
        elif kind == "cond_batchnorm":
            m = CondBatchNorm(c_in, 3)
            x_shape, call = (B, c_in, 2, 2), (lambda m, x: m(x, y))
        elif kind == "gen_block":
            m = GenBlock(r, c_in, c_out, n_classes=3, upsample=bool(rng.random() < 0.5))
            x_shape, call = (B, c_in, 2, 2), (lambda m, x: m(x, y))
        elif kind == "dis_block":
            m = DisBlock(r, c_in, c_out, downsample=bool(rng.random() < 0.5),
                         first=bool(rng.random() < 0.5), spectral_norm=sn)
            x_shape, call = (B, c_in, 4, 4), (lambda m, x: m(x))
        else:
            m = DenseBlock(r, c_in, c_out, spectral_norm=sn)
            x_shape, call = (B, c_in), (lambda m, x: m(x))
    randomize(m, rng)
    batch_stats = kind in ("batchnorm", "cond_batchnorm", "gen_block")
    m.train(batch_stats)
    x = t64(rng.normal(size=x_shape), True)
    W = rng.normal(size=call(m, x).shape)
    return directional_errors(lambda: weighted(call(m, x), W), [x] + m.parameters(), rng)


MODELS = {
    **{f"D_image_{v}": (lambda v: lambda rng: run_discriminator(rng, image_spec(rng, "image", v)))(v)
       for v in ("projection", "concat_input", "concat_hidden", "concat_output", "acgan")},
    **{f"D_vector_{v}": (lambda v: lambda rng: run_discriminator(rng, vector_spec(rng, v)))(v)
       for v in ("projection", "concat_input", "concat_hidden", "concat_output", "acgan")},
    "G_image": lambda rng: run_generator(rng, image_spec(rng, "image")),
    "G_vector": lambda rng: run_generator(rng, vector_spec(rng)),
    "G_image_morph": lambda rng: run_generator(rng, image_spec(rng, "image"), morph=True),
    "G_superres": run_sr_generator,
    "D_superres": run_sr_discriminator,
    **{f"layer_{k}": (lambda k: lambda rng: run_layer(rng, k))(k)
       for k in ("linear", "conv", "embedding", "batchnorm", "cond_batchnorm", "gen_block",
                 "dis_block", "dense_block")},
}


@pytest.mark.parametrize("name", sorted(MODELS))
def test_assembled_gradient(name):
    rng = np.random.default_rng(1000 + sorted(MODELS).index(name))
    worst = 0.0
    for i in range(N_CONFIGS):
        errs = MODELS[name](rng)
        worst = max(worst, max(errs))
    assert worst <= TOL, f"{name}: worst relative error {worst:.2e}"
