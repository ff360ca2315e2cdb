import numpy as np
import pytest

from ucgan.autodiff import Tensor, grad
from ucgan.latent import check_code, sample_latent
from ucgan.models import (
    AvgPool,
    Conv,
    CondPlanes,
    Dense,
    ModelConfig,
    ModelConfigError,
    Upsample,
    audit_network,
    build_attribute_classifier,
    build_discriminator,
    build_encoder,
    build_generator,
    encode_attributes,
)


def cfg_at(res, **kw):
    return ModelConfig(resolution=res, d=4, base_channels=4, channel_cap=16, attr_width=0.25, **kw)


def attrs_for(cfg, n, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.stack([rng.integers(0, a.n, n) for a in cfg.attributes], axis=1)
    return encode_attributes(cfg.attributes, labels)


def trace_shapes(net, x, cond=None):
    from ucgan.models import RunContext

    ctx = RunContext(train=False, cond=None if cond is None else Tensor(cond))
    shapes = []
    x = Tensor(x)
    for layer in net.layers:
        x = layer(x, ctx)
        shapes.append((type(layer).__name__, x.shape))
    return shapes


def test_invalid_resolution():
    for r in (4, 12, 33):
        with pytest.raises(ModelConfigError):
            ModelConfig(resolution=r)


def test_full_scale_encoder_output_width():
    enc = build_encoder(ModelConfig.full_scale())
    dense = [l for l in enc.layers if isinstance(l, Dense)][-1]
    assert dense.w.shape[1] == 100


def test_desk_encoder_blocks_and_width():
    cfg = ModelConfig(resolution=32, d=16)
    enc = build_encoder(cfg)
    assert sum(isinstance(l, AvgPool) for l in enc.layers) == 3
    out = enc(np.zeros((1, 32, 32, 3)), train=False)
    assert out.shape == (1, 32)


def test_encoder_output_is_unit_complex():
    cfg = cfg_at(16)
    out = build_encoder(cfg)(np.random.default_rng(0).uniform(size=(3, 16, 16, 3)), train=False)
    assert check_code(out.data)


def test_full_scale_generator_tail():
    cfg = ModelConfig.full_scale()
    gen = build_generator(cfg)
    tail = gen.layers[-6:]
    assert isinstance(tail[1], Upsample) and isinstance(tail[4], AvgPool)
    assert tail[3].w.shape[-1] == 3


def test_desk_generator_peak_size():
    cfg = cfg_at(32)
    z = sample_latent(cfg.d, np.random.default_rng(0), n=1)
    shapes = trace_shapes(build_generator(cfg), z, attrs_for(cfg, 1))
    assert max(s[1] for _, s in shapes if len(s) == 4) == 64
    assert shapes[-1][1] == (1, 32, 32, 3)


@pytest.mark.parametrize("res", [8, 16, 32])
def test_shape_audit(res):
    cfg = cfg_at(res)
    n = 2
    x = np.zeros((n, res, res, 3))
    a = attrs_for(cfg, n)
    assert build_encoder(cfg)(x, train=False).shape == (n, 2 * cfg.d)
    g = build_generator(cfg)(np.zeros((n, 2 * cfg.d)), cond=a, train=False)
    assert g.shape == (n, res, res, 3)
    assert build_discriminator(cfg)(x, cond=a, train=False).shape == x.shape
    heads = build_attribute_classifier(cfg)(x, train=False)
    assert {k: v.shape for k, v in heads.items()} == {a_.name: (n, a_.n) for a_ in cfg.attributes}


@pytest.mark.parametrize("res", [8, 16, 32])
def test_catalog_audit(res):
    cfg = cfg_at(res)
    for build in (build_encoder, build_generator, build_discriminator, build_attribute_classifier):
        assert audit_network(build(cfg))


def test_generator_output_in_unit_range():
    cfg = cfg_at(16)
    rng = np.random.default_rng(1)
    out = build_generator(cfg)(sample_latent(cfg.d, rng, n=8) * 5, cond=attrs_for(cfg, 8), train=False)
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0


def test_discriminator_bottleneck_and_unfold_channels():
    cfg = cfg_at(16)
    d = build_discriminator(cfg)
    dense = [l for l in d.layers if isinstance(l, Dense)]
    assert dense[0].w.shape[1] == 2 * cfg.d
    shapes = trace_shapes(d, np.zeros((1, 16, 16, 3)), attrs_for(cfg, 1))
    after = [s for name, s in shapes if name == "CondPlanes"][0]
    assert after == (1, 4, 4, cfg.encoder_channels()[-1] + cfg.attr_dim)
    assert any(isinstance(l, CondPlanes) for l in d.layers)


def test_classifier_head_widths_and_eval_determinism():
    cfg = cfg_at(16)
    a = build_attribute_classifier(cfg)
    x = np.random.default_rng(2).uniform(size=(3, 16, 16, 3))
    o1 = a(x, train=False)
    o2 = a(x, train=False)
    assert o1["gender"].shape[1] == 2 and o1["ethnicity"].shape[1] == 5
    assert o1["age_bin"].shape[1] == cfg.attributes[2].n
    for k in o1:
        np.testing.assert_array_equal(o1[k].data, o2[k].data)
    t1 = a(x, train=True, rng=np.random.default_rng(0), update_stats=False)
    t2 = a(x, train=True, rng=np.random.default_rng(1), update_stats=False)
    assert not np.array_equal(t1["gender"].data, t2["gender"].data)


def test_generator_parameters_all_receive_gradient():
    cfg = cfg_at(8)
    gen = build_generator(cfg)
    rng = np.random.default_rng(3)
    out = gen(sample_latent(cfg.d, rng, n=4), cond=attrs_for(cfg, 4), train=True)
    params = gen.parameters()
    grads = grad(out.sum(), params)
    for p, g in zip(params, grads):
        assert np.all(np.isfinite(g))
        assert np.any(g != 0), p.name


def test_encoder_accepts_generator_output():
    cfg = cfg_at(16)
    rng = np.random.default_rng(4)
    img = build_generator(cfg)(sample_latent(cfg.d, rng, n=2), cond=attrs_for(cfg, 2), train=False)
    assert build_encoder(cfg)(img, train=False).shape == (2, 2 * cfg.d)


def test_vector_mode_networks():
    cfg = ModelConfig(mode="vector", d=1, attributes=[], hidden=8)
    z = sample_latent(1, np.random.default_rng(5), n=6)
    x = build_generator(cfg)(z)
    assert x.shape == (6, 2)
    assert build_encoder(cfg)(x).shape == (6, 2)
    assert build_discriminator(cfg)(x).shape == (6, 2)


def test_no_strided_or_even_convolutions():
    cfg = cfg_at(32)
    for build in (build_encoder, build_generator, build_discriminator, build_attribute_classifier):
        for layer in build(cfg).all_layers():
            if isinstance(layer, Conv):
                assert layer.w.shape[0] % 2 == 1


def test_state_dict_round_trip():
    cfg = cfg_at(8)
    a, b = build_encoder(cfg, np.random.default_rng(0)), build_encoder(cfg, np.random.default_rng(1))
    b.load_state_dict(a.state_dict())
    for k, v in a.state_dict().items():
        np.testing.assert_array_equal(b.state_dict()[k], v)
    assert all(k.startswith("E/") for k in a.state_dict())
