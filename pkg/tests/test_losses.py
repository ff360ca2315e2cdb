import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ucgan.autodiff import Tensor, check_gradients, grad, precision
from ucgan.latent import pairs_of
from ucgan.losses import (
    BeganState,
    LossMixerState,
    adaptive_mix,
    began_update,
    cyclic_histogram,
    entropy_loss,
    focal_loss,
    histogram_nodes,
    latent_identity_loss,
    locality_loss,
    loss_max_pool,
    recon_image_loss,
    softargmax,
)


def mass(angles, k):
    with precision(np.float64):
        return cyclic_histogram(np.asarray(angles, dtype=np.float64), k).masses()


# ------------------------------------------------------------ histogram


def test_angle_on_node_is_one_hot():
    nodes = histogram_nodes(8)
    np.testing.assert_allclose(mass([nodes[3]] * 5, 8), np.eye(8)[3], atol=1e-12)


def test_midpoint_split():
    np.testing.assert_allclose(mass([math.pi / 4], 4), [0, 0, 0.5, 0.5], atol=1e-12)


def test_wraparound_split():
    np.testing.assert_allclose(mass([3 * math.pi / 4], 4), [0.5, 0, 0, 0.5], atol=1e-12)


def test_histogram_errors():
    with pytest.raises(ValueError):
        cyclic_histogram(np.zeros(0), 8)
    with pytest.raises(ValueError):
        cyclic_histogram(np.zeros(3), 1)


def test_stacked_histogram_per_dimension():
    ang = np.random.default_rng(0).uniform(-math.pi, math.pi, (50, 3))
    with precision(np.float64):
        h = cyclic_histogram(ang, 16)
    assert h.mass.shape == (3, 16)
    np.testing.assert_allclose(h.masses().sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(h.masses()[1], mass(ang[:, 1], 16), atol=1e-12)


def test_entropy_examples():
    with precision(np.float64):
        assert entropy_loss(np.full(8, 1 / 8)).item() == pytest.approx(-math.log(8), abs=1e-6)
        assert abs(entropy_loss(np.eye(4)[0]).item()) < 1e-9
        assert entropy_loss(np.array([0.5, 0.5, 0, 0])).item() == pytest.approx(-math.log(2), abs=1e-9)


def test_entropy_of_histogram_gradient():
    rng = np.random.default_rng(1)
    k = 16
    spacing = 2 * math.pi / k
    ang = rng.uniform(-math.pi, math.pi, 12)
    off = np.mod(ang + math.pi, spacing)
    ang = np.where(np.minimum(off, spacing - off) < 1e-3, ang + 5e-3, ang)
    with precision(np.float64):
        x = Tensor(ang, requires_grad=True)
        res = check_gradients(lambda: entropy_loss(cyclic_histogram(x, k)), [x], h=1e-6)
    assert res.passed, res


def test_brute_force_agreement_at_large_n():
    ang = np.random.default_rng(2).uniform(-math.pi, math.pi, 100_000)
    m = mass(ang, 36)
    counts = np.histogram(ang, bins=36, range=(-math.pi, math.pi))[0] / ang.size
    assert np.max(np.abs(m - 1 / 36)) < 0.004
    assert np.max(np.abs(counts - 1 / 36)) < 0.004


angle_lists = arrays(np.float64, st.integers(1, 40), elements=st.floats(-math.pi, math.pi, exclude_min=True))


@settings(max_examples=60, deadline=None)
@given(angle_lists, st.integers(2, 40))
def test_mass_sums_to_one_and_entropy_bounded(ang, k):
    m = mass(ang, k)
    assert np.all(m >= -1e-15)
    assert m.sum() == pytest.approx(1.0, abs=1e-6)
    with precision(np.float64):
        assert entropy_loss(m).item() >= -math.log(k) - 1e-6


@settings(max_examples=60, deadline=None)
@given(angle_lists, st.integers(2, 24))
def test_rotation_by_one_node_permutes_mass(ang, k):
    spacing = 2 * math.pi / k
    rotated = np.mod(ang + spacing + math.pi, 2 * math.pi) - math.pi
    np.testing.assert_allclose(mass(rotated, k), np.roll(mass(ang, k), 1), atol=1e-6)


# ------------------------------------------------------- reconstruction


def test_recon_examples():
    rng = np.random.default_rng(3)
    x = rng.uniform(size=(6, 5, 3))
    y = rng.uniform(size=(6, 5, 3))
    with precision(np.float64):
        np.testing.assert_array_equal(recon_image_loss(x, x).data, 0.0)
        np.testing.assert_allclose(recon_image_loss(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.5)).data, 3.0)
        np.testing.assert_allclose(recon_image_loss(x, y).data, recon_image_loss(y, x).data, atol=1e-12)
        assert recon_image_loss(x[None], y[None]).shape == (1, 6, 5)
    with pytest.raises(ValueError):
        recon_image_loss(x, y[:5])


def test_recon_gradient():
    rng = np.random.default_rng(4)
    with precision(np.float64):
        x = Tensor(rng.uniform(size=(5, 5, 3)), requires_grad=True)
        y = Tensor(rng.uniform(size=(5, 5, 3)))
        res = check_gradients(lambda: recon_image_loss(x, y).sum(), [x], h=1e-7, rng=rng, max_coords=30)
    assert res.passed, res


# ---------------------------------------------------------- max pool


def test_max_pool_examples():
    with precision(np.float64):
        v = np.array([5.0, 1.0, 3.0, 2.0])
        assert loss_max_pool(v, 1.0).item() == pytest.approx(v.mean())
        assert loss_max_pool(v, 0.5).item() == pytest.approx(4.0)
        assert loss_max_pool(np.full((2, 3, 3), 1.7), 0.3).item() == pytest.approx(1.7)
    with pytest.raises(ValueError):
        loss_max_pool(np.zeros(0))


def test_max_pool_gradient_only_on_selected():
    with precision(np.float64):
        x = Tensor(np.array([5.0, 1.0, 3.0, 2.0]), requires_grad=True)
        (g,) = grad(loss_max_pool(x, 0.5), [x])
    np.testing.assert_allclose(g, [0.5, 0, 0.5, 0])


def test_max_pool_merges_across_batch():
    a = np.zeros((2, 2, 2))
    a[0] = 10.0
    with precision(np.float64):
        assert loss_max_pool(a, 0.5).item() == pytest.approx(10.0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 10)), st.floats(0.05, 1.0),
       st.floats(0, 5), st.integers(0, 1000))
def test_max_pool_is_monotone(v, q, bump, pick):
    with precision(np.float64):
        before = loss_max_pool(v, q).item()
        w = v.copy()
        w[pick % len(v)] += bump
        assert loss_max_pool(w, q).item() >= before - 1e-12


# ---------------------------------------------------------- latent identity


def test_latent_identity_examples():
    a = pairs_of(np.array([[0.3, -1.0, 2.0]]))
    with precision(np.float64):
        assert latent_identity_loss(a, a).item() == 0.0
        anti = pairs_of(np.array([[0.3 + math.pi, -1.0 + math.pi, 2.0 - math.pi]]))
        assert latent_identity_loss(a, anti).item() == pytest.approx(4.0)
        orth = pairs_of(np.array([[0.3 + math.pi / 2, -1.0 - math.pi / 2, 2.0 + math.pi / 2]]))
        assert latent_identity_loss(a, orth).item() == pytest.approx(2.0)
    with pytest.raises(ValueError):
        latent_identity_loss(a, a[:, :4])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-math.pi, math.pi)),
       arrays(np.float64, (3, 4), elements=st.floats(-math.pi, math.pi)))
def test_latent_identity_symmetric(a, b):
    za, zb = pairs_of(a), pairs_of(b)
    with precision(np.float64):
        ab = latent_identity_loss(za, zb).item()
        assert ab == pytest.approx(latent_identity_loss(zb, za).item(), abs=1e-12)
        assert 0 <= ab <= 4 + 1e-12
        assert latent_identity_loss(za, za).item() < 1e-7


# ---------------------------------------------------------- attribute losses


def test_locality_examples():
    with precision(np.float64):
        peaked = np.array([0.0, 0.0, 50.0, 0.0, 0.0])
        assert locality_loss(peaked, 2, beta=1.0).item() < 1e-4
        assert locality_loss(np.zeros(5), 2).item() == pytest.approx(1.2)
        assert locality_loss(np.zeros(5), 0).item() == pytest.approx(2.0)
    with pytest.raises(ValueError):
        locality_loss(np.zeros(5), 5)


def test_softargmax_examples():
    with precision(np.float64):
        assert softargmax(np.array([0, 0, 0, 40.0, 0])).item() == pytest.approx(3.0, abs=1e-3)
        assert softargmax(np.zeros(5)).item() == pytest.approx(2.0)
        assert softargmax(np.array([0.0, math.log(3)])).item() == pytest.approx(0.75)


def test_focal_examples():
    with precision(np.float64):
        p = np.array([0.2, 0.5, 0.3])
        assert focal_loss(p, 1, gamma=0).item() == pytest.approx(math.log(2))
        assert focal_loss(np.array([0.0, 1.0]), 1).item() == pytest.approx(0.0, abs=1e-9)
        assert focal_loss(p, 1, gamma=2).item() == pytest.approx(0.25 * math.log(2))
    with pytest.raises(ValueError):
        focal_loss(p, 3)


@pytest.mark.parametrize("which", ["locality", "softargmax", "focal"])
def test_attribute_loss_gradients(which):
    rng = np.random.default_rng(5)
    with precision(np.float64):
        x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        y = rng.integers(0, 6, 4)
        fns = {
            "locality": lambda: locality_loss(x, y, beta=1.5),
            "softargmax": lambda: softargmax(x, beta=0.7).square().sum(),
            "focal": lambda: focal_loss(x.softmax(axis=-1), y, gamma=2.0),
        }
        res = check_gradients(fns[which], [x])
    assert res.passed, res


# ---------------------------------------------------------- adaptive mixing


def test_single_loss_mix_is_identity():
    with precision(np.float64):
        st_ = LossMixerState(1)
        assert adaptive_mix(st_, [Tensor(3.7)]).item() == pytest.approx(3.7)
        st_.gamma.data[:] = 5.0
        assert adaptive_mix(st_, [Tensor(0.4)]).item() == pytest.approx(0.4)


def test_equal_smoothed_values_give_unit_weights():
    st_ = LossMixerState(3)
    st_.smoothed = np.array([2.0, 2.0, 2.0])
    np.testing.assert_allclose(st_.weights(), 1.0)


def test_hand_computed_mix():
    with precision(np.float64):
        st_ = LossMixerState(2)
        st_.smoothed = np.array([1.0, 3.0])
        np.testing.assert_allclose(st_.weights(), [2.0, 2 / 3])
        out = adaptive_mix(st_, [Tensor(0.6), Tensor(0.9)], update=False)
        assert out.item() == pytest.approx(0.6 + 0.9 / 3)


def test_mix_smoothing_update_and_gradients():
    with precision(np.float64):
        st_ = LossMixerState(2, rho=0.5)
        adaptive_mix(st_, [Tensor(1.0), Tensor(3.0)])
        np.testing.assert_allclose(st_.smoothed, [1.0, 3.0])
        a, b = Tensor(3.0, requires_grad=True), Tensor(1.0, requires_grad=True)
        out = adaptive_mix(st_, [a, b])
        np.testing.assert_allclose(st_.smoothed, [2.0, 2.0])
        ga, gb, gg = grad(out, [a, b, st_.gamma])
    assert ga == pytest.approx(0.5) and gb == pytest.approx(0.5)
    assert np.any(gg != 0)


def test_mix_rejects_zero_gammas():
    st_ = LossMixerState(2)
    st_.gamma.data[:] = 0.0
    with pytest.raises(ValueError):
        adaptive_mix(st_, [Tensor(1.0), Tensor(1.0)])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(0.01, 10)), arrays(np.float64, 3, elements=st.floats(0.1, 3)),
       st.floats(0.1, 10) | st.floats(-10, -0.1))
def test_mix_invariant_to_gamma_scale(v, g, c):
    with precision(np.float64):
        st_ = LossMixerState(3)
        st_.smoothed = v[::-1].copy() + 0.5
        st_.gamma.data[:] = g
        base = adaptive_mix(st_, [Tensor(x) for x in v], update=False).item()
        st_.gamma.data[:] = c * g
        scaled = adaptive_mix(st_, [Tensor(x) for x in v], update=False).item()
    assert scaled == pytest.approx(base, rel=1e-6, abs=1e-9)


# ---------------------------------------------------------------- BEGAN


def test_began_examples():
    s = BeganState(k=0.3, gamma=1.0)
    began_update(s, 0.8, 0.8)
    assert s.k == pytest.approx(0.3)
    s = BeganState(k=0.0, lambda_k=0.001, gamma=0.5)
    d_loss, g_loss = began_update(s, 1.0, 0.3)
    assert s.k == pytest.approx(0.0002)
    assert d_loss.item() == pytest.approx(1.0)
    assert g_loss.item() == pytest.approx(0.3)
    s = BeganState(k=1.0)
    began_update(s, 5.0, 0.0)
    assert s.k == 1.0
    with pytest.raises(ValueError):
        began_update(BeganState(), -1.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1e4), st.floats(0, 1e4)), min_size=1, max_size=50),
       st.floats(0, 1), st.floats(1e-4, 10))
def test_began_k_stays_in_unit_interval(seq, k0, lam):
    s = BeganState(k=k0, lambda_k=lam)
    for r, f in seq:
        began_update(s, r, f)
        assert 0.0 <= s.k <= 1.0
