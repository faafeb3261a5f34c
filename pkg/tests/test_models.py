import numpy as np
import pytest

from projcgan import tensor as T
from projcgan.layers import Linear, one_hot
from projcgan.models import (Discriminator, ModelSpec, SRDiscriminator, SRGenerator,
                             acgan_heads, build_discriminator, build_generator,
                             concat_discriminator, generator_forward, morph_generator,
                             projection_logit, sr_generator_forward, sr_projection_logit)
from projcgan.tensor import Rng, Tensor
from projcgan.training import cross_entropy

from oracles import sr_projection_loop


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


def image_spec(variant, **kw):
    base = dict(kind="image", variant=variant, n_classes=4, image_size=8, g_width=8, d_width=8,
                embed_dim=5, z_dim=6, d_down=(1, 1, 0))
    base.update(kw)
    return ModelSpec(**base)


def build64(fn, spec, seed=0):
    with T.default_dtype(np.float64):
        return fn(Rng(seed), spec).eval()


# -- projection head --

@pytest.fixture
def head(rng):
    with T.default_dtype(np.float64):
        psi = Linear(Rng(3), 5, 1)
    V = t64(rng.normal(size=(4, 5)))
    phi = t64(rng.normal(size=(5,)))
    return phi, V, psi


def test_projection_one_hot(head):
    phi, V, psi = head
    out = projection_logit(phi, np.eye(4)[2], V, psi).item()
    expect = V.data[2] @ phi.data + psi(T.reshape(phi, (1, -1))).item()
    assert out == pytest.approx(expect, abs=1e-12)


def test_projection_zero_condition(head):
    phi, V, psi = head
    out = projection_logit(phi, np.zeros(4), V, psi).item()
    assert out == pytest.approx(psi(T.reshape(phi, (1, -1))).item(), abs=1e-15)


def test_projection_linear_in_y(head, rng):
    phi, V, psi = head
    base = projection_logit(phi, np.zeros(4), V, psi).item()
    y1, y2 = np.eye(4)[0], np.eye(4)[3]
    a, b = 0.3, -1.7
    f = lambda y: projection_logit(phi, y, V, psi).item() - base
    assert f(a * y1 + b * y2) == pytest.approx(a * f(y1) + b * f(y2), abs=1e-12)


def test_projection_dim_mismatch(head):
    _, V, psi = head
    with pytest.raises(T.DimensionError):
        projection_logit(t64(np.ones(3)), np.eye(4)[0], V, psi)


# -- concat variants --

def test_concat_hidden_zero_embedding_matches_unconditional(rng):
    D = build64(Discriminator, image_spec("concat_hidden", hidden_index=1, spectral_norm=False))
    D.cond_embed.weight.data[:] = 0
    x = t64(rng.normal(size=(3, 3, 8, 8)))
    a = D(x, np.array([0, 1, 2])).data
    b = D(x, np.array([3, 3, 3])).data
    np.testing.assert_array_equal(a, b)


def test_concat_input_channel_count():
    D = build64(Discriminator, image_spec("concat_input"))
    assert D.blocks[0].conv1.weight.shape[1] == 3 + 5


def test_concat_labels_change_logit(rng):
    for variant in ("concat_input", "concat_hidden", "concat_output"):
        D = build64(Discriminator, image_spec(variant))
        x = t64(np.repeat(rng.normal(size=(1, 3, 8, 8)), 2, axis=0))
        out = concat_discriminator(x, np.array([0, 1]), D).data
        assert out[0] != out[1]


def test_concat_bad_variant():
    D = build64(Discriminator, image_spec("projection"))
    with pytest.raises(ValueError):
        concat_discriminator(t64(np.zeros((1, 3, 8, 8))), np.array([0]), D)


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        ModelSpec(variant="concat_middle")


def test_trunk_sharing_when_conditioning_zeroed(rng):
    spec = dict(spectral_norm=False)
    Ds = {v: build64(Discriminator, image_spec(v, **spec)) for v in
          ("projection", "concat_output", "acgan")}
    ref = Ds["projection"]
    ref.embed.weight.data[:] = 0
    Ds["concat_output"].cond_embed.weight.data[:] = 0
    x = t64(rng.normal(size=(2, 3, 8, 8)))
    y = np.array([1, 2])
    out_proj = ref(x, y).data
    for v in ("concat_output", "acgan"):
        D = Ds[v]
        for (na, a), (nb, b) in zip(ref.named_parameters(), D.named_parameters()):
            if na.startswith("blocks"):
                b.data = a.data.copy()
        D.psi.weight.data[:, :8] = ref.psi.weight.data
        D.psi.bias.data[:] = ref.psi.bias.data
        out = D(x, y)
        out = out[0] if v == "acgan" else out
        np.testing.assert_allclose(out.data, out_proj, atol=1e-12)


# -- acgan heads --

def test_acgan_zero_class_head_uniform(rng):
    with T.default_dtype(np.float64):
        adv, cls = Linear(Rng(0), 5, 1), Linear(Rng(1), 5, 4)
    cls.weight.data[:] = 0
    phi = t64(rng.normal(size=(3, 5)))
    a, c = acgan_heads(phi, adv, cls)
    assert a.shape == (3,)
    np.testing.assert_array_equal(c.data, 0)
    assert cross_entropy(c, [0, 1, 3]).item() == pytest.approx(np.log(4), abs=1e-12)


def test_acgan_heads_disjoint_gradients(rng):
    D = build64(Discriminator, image_spec("acgan"))
    adv, _ = D(t64(rng.normal(size=(2, 3, 8, 8))), np.array([0, 1]))
    adv.sum().backward()
    assert D.classifier.weight.grad is None or not D.classifier.weight.grad.any()
    assert D.psi.weight.grad.any()


# -- generators --

def test_generator_eval_is_deterministic(rng):
    G = build64(build_generator, image_spec("projection"))
    z = rng.normal(size=6)
    a = generator_forward(G, z, 2).data
    b = generator_forward(G, z, 2).data
    assert a.tobytes() == b.tobytes()
    assert a.shape == (3, 8, 8)


def test_generator_output_range(rng):
    G = build64(build_generator, image_spec("projection"))
    out = generator_forward(G, 5 * rng.normal(size=(16, 6)), np.arange(16) % 4).data
    assert out.min() >= -1 and out.max() <= 1


def test_generator_class_out_of_range():
    G = build64(build_generator, image_spec("projection"))
    with pytest.raises(ValueError):
        generator_forward(G, np.zeros(6), 4)


def test_generator_uses_conditional_bn():
    G = build64(build_generator, image_spec("projection"))
    assert all(type(b.bn1).__name__ == "CondBatchNorm" for b in G.blocks)


# -- morphing --

def test_morph_endpoints_bit_equal(rng):
    G = build64(build_generator, image_spec("projection"))
    for b in G.blocks:
        for bn in (b.bn1, b.bn2):
            bn.gamma_table.data = rng.normal(size=bn.gamma_table.shape)
            bn.beta_table.data = rng.normal(size=bn.beta_table.shape)
    z = rng.normal(size=(2, 6))
    a0 = morph_generator(G, z, 1, 3, 0.0).data
    a1 = morph_generator(G, z, 1, 3, 1.0).data
    assert a0.tobytes() == generator_forward(G, z, 1).data.tobytes()
    assert a1.tobytes() == generator_forward(G, z, 3).data.tobytes()


def test_morph_midpoint_gamma():
    G = build64(build_generator, image_spec("projection"))
    bn = G.blocks[0].bn1
    bn.gamma_table.data[0] = 2.0
    bn.gamma_table.data[1] = 4.0
    seen = {}
    orig = bn.forward

    def spy(h, y=None, mix=None):
        y1, y2, lam = mix
        g = (T.take_rows(bn.gamma_table, y1) * (1 - lam) + T.take_rows(bn.gamma_table, y2) * lam)
        seen["gamma"] = g.data
        return orig(h, y, mix)

    bn.forward = spy
    morph_generator(G, np.zeros(6), 0, 1, 0.5)
    assert (seen["gamma"] == 3.0).all()


@pytest.mark.parametrize("lam", [-0.1, 1.5])
def test_morph_lambda_out_of_range(lam):
    G = build64(build_generator, image_spec("projection"))
    with pytest.raises(ValueError):
        morph_generator(G, np.zeros(6), 0, 1, lam)


def test_morph_path_continuity(rng):
    spec = image_spec("projection")
    G = build64(build_generator, spec)
    D = build64(build_discriminator, spec)
    for b in G.blocks:
        b.bn1.gamma_table.data = 1 + rng.normal(size=b.bn1.gamma_table.shape)
    z = rng.normal(size=6)

    def logits(n):
        lams = np.linspace(0, 1, n + 1)
        xs = np.stack([morph_generator(G, z, 0, 2, lam).data for lam in lams])
        return D(t64(xs), np.zeros(len(xs), int)).data

    jump64 = np.abs(np.diff(logits(64))).max()
    jump128 = np.abs(np.diff(logits(128))).max()
    assert jump64 <= 10 * jump128


# -- super-resolution --

def sr_spec(**kw):
    base = dict(kind="superres", variant="projection", n_classes=4, image_size=4, g_width=6,
                d_width=6, z_dim=3, sr_factor=4)
    base.update(kw)
    return ModelSpec(**base)


def test_sr_output_extent(rng):
    G = build64(SRGenerator, sr_spec())
    out = sr_generator_forward(G, rng.normal(size=(2, 3)), rng.uniform(-1, 1, (2, 3, 4, 4)))
    assert out.shape == (2, 3, 16, 16)


def test_sr_eval_deterministic(rng):
    G = build64(SRGenerator, sr_spec())
    z, y = rng.normal(size=(1, 3)), rng.uniform(-1, 1, (1, 3, 4, 4))
    assert sr_generator_forward(G, z, y).data.tobytes() == sr_generator_forward(G, z, y).data.tobytes()


def test_sr_extent_mismatch(rng):
    G = build64(SRGenerator, sr_spec())
    with pytest.raises(T.DimensionError):
        sr_generator_forward(G, rng.normal(size=(1, 3)), np.zeros((1, 3, 5, 5)))


def test_sr_z_enters_every_block():
    G = build64(SRGenerator, sr_spec())
    assert all(b.conv1.weight.shape[1] == 6 + 3 for b in G.blocks)


def test_sr_projection_zero_condition(rng):
    D = build64(SRDiscriminator, sr_spec())
    x = t64(rng.normal(size=(2, 3, 16, 16)))
    phi = D.phi(x)
    out = sr_projection_logit(phi, np.zeros((2, 3, 4, 4)), D.V, D.psi).data
    np.testing.assert_allclose(out, D.psi(phi).data.ravel(), atol=1e-15)


def test_sr_projection_1x1_kernel(rng):
    with T.default_dtype(np.float64):
        from projcgan.layers import Conv2d
        V = Conv2d(Rng(0), 1, 1, k=1, bias=False)
    phi = t64(rng.normal(size=(2, 1, 3, 3)))
    y = rng.normal(size=(2, 1, 3, 3))
    out = sr_projection_logit(phi, y, V, lambda p: t64(np.zeros((2, 1)))).data
    expect = (V.weight.data.item() * phi.data * y).sum(axis=(1, 2, 3))
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_sr_projection_matches_loop(rng):
    D = build64(SRDiscriminator, sr_spec(spectral_norm=False))
    x = t64(rng.normal(size=(2, 3, 16, 16)))
    y = rng.normal(size=(2, 3, 4, 4))
    phi = D.phi(x)
    out = sr_projection_logit(phi, y, D.V, D.psi).data - D.psi(phi).data.ravel()
    np.testing.assert_allclose(out, sr_projection_loop(phi.data, y, D.V.weight.data, 1), atol=1e-10)


def test_sr_projection_linear_in_condition(rng, f64):
    D = build64(SRDiscriminator, sr_spec())
    x = t64(rng.normal(size=(1, 3, 16, 16)))
    y1, y2 = rng.normal(size=(2, 1, 3, 4, 4))
    f = lambda y: D(x, y).data - D(x, np.zeros_like(y)).data
    np.testing.assert_allclose(f(2 * y1 - 3 * y2), 2 * f(y1) - 3 * f(y2), atol=1e-10)


def test_sr_projection_spatial_mismatch(rng):
    D = build64(SRDiscriminator, sr_spec())
    with pytest.raises(T.DimensionError):
        D(t64(rng.normal(size=(1, 3, 16, 16))), np.zeros((1, 3, 8, 8)))


def test_vector_models_shapes(rng):
    spec = ModelSpec(kind="vector", variant="projection", g_width=8, d_width=8)
    G = build64(build_generator, spec)
    D = build64(build_discriminator, spec)
    x = generator_forward(G, rng.normal(size=(5, 16)), np.arange(5))
    assert x.shape == (5, 2)
    assert D(x, np.arange(5)).shape == (5,)
