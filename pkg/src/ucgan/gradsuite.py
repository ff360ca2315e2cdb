"""Finite-difference verification of every operator, loss and network.

Each case builds float64 inputs from a seed, keeping piecewise-linear
arguments at least ``MARGIN`` away from their kinks, and compares analytic
gradients with central differences.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import losses as L
from .autodiff import Tensor, ops, precision
from .autodiff.gradcheck import GradCheckResult, check_gradients
from .latent import angles_of, normalize_pairs
from .models import (
    BatchNorm,
    CondPlanes,
    Conv,
    Dense,
    ModelConfig,
    PairNorm,
    RunContext,
    Squash,
    TanhBox,
    build_attribute_classifier,
    build_discriminator,
    build_encoder,
    build_generator,
)

MARGIN = 1e-3
TOL = 1e-4


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def away_from_zero(a, margin=MARGIN):
    """Push entries with |a| < 2*margin out to +-2*margin, keeping the sign."""
    a = np.asarray(a, dtype=np.float64)
    sign = np.where(a < 0, -1.0, 1.0)
    return np.where(np.abs(a) < 2 * margin, 2 * margin * sign, a)


def distinct(a, margin=MARGIN):
    """Spread values so no two are closer than ``margin`` (ties are kinks for max/min)."""
    flat = np.asarray(a, dtype=np.float64).ravel()
    order = np.argsort(flat)
    out = np.empty_like(flat)
    out[order] = np.sort(flat) + 4 * margin * np.arange(flat.size)
    return out.reshape(np.shape(a))


def _resample(rng, draw, ok, attempts=100):
    for _ in range(attempts):
        value = draw(rng)
        if ok(value):
            return value
    raise RuntimeError("could not draw inputs away from kinks")


# ------------------------------------------------------------------- cases
# Each case: rng -> (fn, leaves). Cases are grouped by what they exercise.


def _binary(name):
    def case(rng):
        a = leaf(rng.standard_normal((3, 4)))
        b_raw = rng.standard_normal((1, 4))
        if name == "div":
            b_raw = np.sign(b_raw) * (0.5 + np.abs(b_raw))
        b = leaf(b_raw)
        f = {"add": ops.add, "sub": ops.sub, "mul": ops.mul, "div": ops.div}[name]
        return (lambda: f(a, b)), [a, b]

    return case


def _unary(name):
    def case(rng):
        raw = rng.standard_normal((3, 5))
        if name in ("log", "sqrt"):
            raw = 0.2 + np.abs(raw)
        if name in ("abs", "elu"):
            raw = away_from_zero(raw)
        x = leaf(raw)
        f = {
            "abs": ops.absolute, "exp": ops.exp, "log": ops.log, "sqrt": ops.sqrt,
            "square": ops.square, "elu": ops.elu, "tanh": ops.tanh,
        }[name]
        return (lambda: f(x)), [x]

    return case


def case_atan2(rng):
    # keep away from the branch cut on the negative x axis
    ang = rng.uniform(-2.8, 2.8, size=6)
    r = rng.uniform(0.5, 2.0, size=6)
    y, x = leaf(r * np.sin(ang)), leaf(r * np.cos(ang))
    return (lambda: ops.atan2(y, x)), [y, x]


def case_matmul(rng):
    a = leaf(rng.standard_normal((2, 3, 4)))
    b = leaf(rng.standard_normal((4, 5)))
    return (lambda: a @ b), [a, b]


def case_conv2d(rng):
    x = leaf(rng.standard_normal((2, 5, 6, 3)))
    w = leaf(rng.standard_normal((3, 3, 3, 4)) * 0.3)
    return (lambda: ops.conv2d(x, w)), [x, w]


def case_conv2d_1x1(rng):
    x = leaf(rng.standard_normal((1, 4, 4, 2)))
    w = leaf(rng.standard_normal((1, 1, 2, 3)))
    return (lambda: ops.conv2d(x, w)), [x, w]


def case_avg_pool(rng):
    x = leaf(rng.standard_normal((2, 6, 6, 2)))
    return (lambda: ops.avg_pool(x, 2)), [x]


def case_avg_pool_padded(rng):
    x = leaf(rng.standard_normal((1, 7, 6, 2)))
    return (lambda: ops.avg_pool(x, 3, 2, 1)), [x]


def case_upsample(rng):
    x = leaf(rng.standard_normal((2, 3, 3, 2)))
    return (lambda: ops.upsample(x, 2)), [x]


def _reduce(name):
    def case(rng):
        raw = rng.standard_normal((3, 4))
        if name in ("max", "min"):
            raw = distinct(raw)
        x = leaf(raw)
        f = {"sum": ops.reduce_sum, "mean": ops.reduce_mean, "max": ops.reduce_max, "min": ops.reduce_min}[name]
        return (lambda: f(x, axis=1)), [x]

    return case


def case_softmax(rng):
    x = leaf(rng.standard_normal((3, 5)))
    return (lambda: ops.softmax(x, axis=-1)), [x]


def case_concat(rng):
    a, b = leaf(rng.standard_normal((2, 3))), leaf(rng.standard_normal((2, 2)))
    return (lambda: ops.concat([a, b], axis=1)), [a, b]


def case_reshape(rng):
    x = leaf(rng.standard_normal((2, 6)))
    return (lambda: ops.reshape(x, (3, 4)) * Tensor(np.arange(12.0).reshape(3, 4))), [x]


def case_stop_gradient(rng):
    x = leaf(rng.standard_normal(4))
    return (lambda: ops.stop_gradient(x) * 3.0), [x]


def _off_nodes(rng, shape, k):
    """Angles at least MARGIN (in node-spacing units) from every histogram node."""
    spacing = 2 * math.pi / k

    def draw(r):
        return r.uniform(-math.pi, math.pi, size=shape)

    def ok(a):
        frac = ((a + math.pi) / spacing) % 1.0
        return np.all((frac > MARGIN) & (frac < 1 - MARGIN))

    return _resample(rng, draw, ok)


def case_cyclic_histogram(rng):
    a = leaf(_off_nodes(rng, (20,), 8))
    return (lambda: L.cyclic_histogram(a, 8).mass), [a]


def case_entropy(rng):
    a = leaf(_off_nodes(rng, (30, 2), 8))
    return (lambda: L.entropy_loss(L.cyclic_histogram(a, 8))), [a]


def case_recon_image(rng):
    def draw(r):
        return r.uniform(0, 1, (2, 5, 5, 3)), r.uniform(0, 1, (2, 5, 5, 3))

    def ok(pair):
        x, y = pair
        if np.min(np.abs(x - y)) < MARGIN:
            return False
        # the gradient-magnitude path has its own abs arguments
        luma = np.array(L.YIQ_LUMA)
        mats = [L._central_difference_matrix(5), L._central_difference_matrix(5).T]
        mags = []
        for img in (x, y):
            lum = img @ luma
            du, dv = mats[0] @ lum, lum @ mats[1]
            if np.min(np.abs(du)) < MARGIN or np.min(np.abs(dv)) < MARGIN:
                return False
            mags.append(np.abs(du) + np.abs(dv))
        return np.min(np.abs(mags[0] - mags[1])) >= MARGIN

    # replicated borders make the edge differences one-sided but never identically 0
    x, y = _resample(rng, draw, ok, attempts=2000)
    xt, yt = leaf(x), leaf(y)
    return (lambda: L.recon_image_loss(xt, yt)), [xt, yt]


def case_recon_vector(rng):
    x = rng.standard_normal((4, 3))
    y = x + away_from_zero(rng.standard_normal((4, 3)))
    xt, yt = leaf(x), leaf(y)
    return (lambda: L.recon_vector_loss(xt, yt)), [xt, yt]


def case_loss_max_pool(rng):
    x = leaf(distinct(rng.uniform(0, 1, (2, 4, 4))))
    return (lambda: L.loss_max_pool(x, 0.3)), [x]


def case_latent_identity(rng):
    a = leaf(rng.standard_normal((3, 6)))
    b = leaf(rng.standard_normal((3, 6)))
    return (lambda: L.latent_identity_loss(a, b)), [a, b]


def case_normalize_pairs(rng):
    x = leaf(rng.standard_normal((3, 6)))
    return (lambda: normalize_pairs(x)), [x]


def case_angles(rng):
    ang = rng.uniform(-2.8, 2.8, size=(3, 2))
    raw = np.stack([np.cos(ang), np.sin(ang)], axis=-1).reshape(3, 4) * rng.uniform(0.5, 2, (3, 4))
    x = leaf(raw)
    return (lambda: angles_of(normalize_pairs(x))), [x]


def case_locality(rng):
    x = leaf(rng.standard_normal((4, 6)))
    y = rng.integers(6, size=4)
    return (lambda: L.locality_loss(x, y, 1.5)), [x]


def case_softargmax(rng):
    x = leaf(rng.standard_normal((3, 5)))
    return (lambda: L.softargmax(x, 2.0)), [x]


def case_focal(rng):
    x = leaf(rng.standard_normal((4, 3)))
    y = rng.integers(3, size=4)
    return (lambda: L.focal_loss(x.softmax(axis=-1), y, 2.0)), [x]


def case_focal_fractional(rng):
    x = leaf(rng.standard_normal((4, 3)))
    y = rng.integers(3, size=4)
    return (lambda: L.focal_loss(x.softmax(axis=-1), y, 1.5)), [x]


def case_cross_entropy(rng):
    x = leaf(rng.standard_normal((4, 5)))
    y = rng.integers(5, size=4)
    return (lambda: L.cross_entropy(x, y)), [x]


def case_adaptive_mix(rng):
    v = [leaf(rng.uniform(0.5, 2.0)) for _ in range(3)]
    state = L.LossMixerState(3)
    state.gamma = leaf(rng.uniform(0.5, 1.5, size=3))
    state.smoothed = rng.uniform(0.5, 2.0, size=3)
    return (lambda: L.adaptive_mix(state, v, update=False)), v + [state.gamma]


def case_began(rng):
    real, fake = leaf(rng.uniform(0.5, 1)), leaf(rng.uniform(0.5, 1))
    state = L.BeganState(k=0.3)

    def fn():
        d, g = L.began_update(L.BeganState(k=state.k), real, fake)
        return d + 0.5 * g

    return fn, [real, fake]


# -------------------------------------------------------------- model cases


def _layer_case(make, shape, train=True, cond=None):
    def case(rng):
        layer = make(rng)
        x = leaf(rng.standard_normal(shape))
        c = None if cond is None else Tensor(np.eye(cond[1])[rng.integers(cond[1], size=cond[0])])

        def fn():
            return layer(x, RunContext(train=train, cond=c, update_stats=False))

        return fn, [x] + list(layer.params().values())

    return case


def _small_config(**kw):
    base = dict(resolution=8, d=2, base_channels=3, channel_cap=4, attr_width=0.05)
    base.update(kw)
    return ModelConfig(**base)


def _network_case(builder, input_kind):
    def case(rng):
        cfg = _small_config()
        net = builder(cfg, rng)
        n = 2
        cond = Tensor(np.concatenate([np.eye(a.n)[rng.integers(a.n, size=n)] for a in cfg.attributes], axis=1))
        if input_kind == "image":
            x = leaf(rng.uniform(0, 1, (n, 8, 8, 3)))
        else:
            x = leaf(normalize_pairs(rng.standard_normal((n, cfg.z_dim))))
        seed = int(rng.integers(2**31))

        def fn():
            out = net(x, cond=cond, train=True, update_stats=False, rng=np.random.default_rng(seed))
            if isinstance(out, dict):
                return ops.concat([out[k] for k in sorted(out)], axis=-1)
            return out

        return fn, [x] + net.parameters()

    return case


def _vector_network_case(builder):
    def case(rng):
        cfg = _small_config(mode="vector", hidden=6, attributes=[])
        net = builder(cfg, rng)
        width = cfg.z_dim if builder is build_generator else cfg.data_dim
        x = leaf(rng.standard_normal((3, width)))
        return (lambda: net(x, train=True)), [x] + net.parameters()

    return case


CASES = {
    **{f"op/{n}": _binary(n) for n in ("add", "sub", "mul", "div")},
    **{f"op/{n}": _unary(n) for n in ("abs", "exp", "log", "sqrt", "square", "elu", "tanh")},
    "op/atan2": case_atan2,
    "op/matmul": case_matmul,
    "op/conv2d": case_conv2d,
    "op/conv2d_1x1": case_conv2d_1x1,
    "op/avg_pool": case_avg_pool,
    "op/avg_pool_padded": case_avg_pool_padded,
    "op/upsample": case_upsample,
    **{f"op/{n}": _reduce(n) for n in ("sum", "mean", "max", "min")},
    "op/softmax": case_softmax,
    "op/concat": case_concat,
    "op/reshape": case_reshape,
    "op/stop_gradient": case_stop_gradient,
    "loss/cyclic_histogram": case_cyclic_histogram,
    "loss/entropy": case_entropy,
    "loss/recon_image": case_recon_image,
    "loss/recon_vector": case_recon_vector,
    "loss/loss_max_pool": case_loss_max_pool,
    "loss/latent_identity": case_latent_identity,
    "loss/normalize_pairs": case_normalize_pairs,
    "loss/angles": case_angles,
    "loss/locality": case_locality,
    "loss/softargmax": case_softargmax,
    "loss/focal": case_focal,
    "loss/focal_fractional": case_focal_fractional,
    "loss/cross_entropy": case_cross_entropy,
    "loss/adaptive_mix": case_adaptive_mix,
    "loss/began": case_began,
    "layer/dense": _layer_case(lambda r: Dense(4, 3, r), (3, 4)),
    "layer/batchnorm": _layer_case(lambda r: BatchNorm(3), (4, 2, 2, 3)),
    "layer/conv_block": _layer_case(lambda r: Conv(2, 3, r), (2, 4, 4, 2)),
    "layer/conv_plain": _layer_case(lambda r: Conv(2, 3, r, norm=False, act=False), (2, 4, 4, 2)),
    "layer/pairnorm": _layer_case(lambda r: PairNorm(), (3, 4)),
    "layer/tanhbox": _layer_case(lambda r: TanhBox(), (3, 4)),
    "layer/squash": _layer_case(lambda r: Squash(), (3, 4)),
    "layer/cond_planes": _layer_case(lambda r: CondPlanes(), (2, 3, 3, 2), cond=(2, 3)),
    "net/encoder": _network_case(build_encoder, "image"),
    "net/generator": _network_case(build_generator, "latent"),
    "net/discriminator": _network_case(build_discriminator, "image"),
    "net/classifier": _network_case(build_attribute_classifier, "image"),
    "net/vector_encoder": _vector_network_case(build_encoder),
    "net/vector_generator": _vector_network_case(build_generator),
    "net/vector_discriminator": _vector_network_case(build_discriminator),
}

# perturb at most this many coordinates per tensor for the larger cases
MAX_COORDS = {"net/": 3, "layer/": 8, "loss/recon_image": 20}


def _max_coords(name):
    for prefix, m in MAX_COORDS.items():
        if name.startswith(prefix):
            return m
    return None


@dataclass
class SuiteReport:
    results: list
    seconds: float

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def worst(self):
        """Largest relative error per case name across seeds."""
        out = {}
        for r in self.results:
            out[r.name] = max(out.get(r.name, 0.0), r.max_rel_error)
        return out


# differences see through a stop-gradient, so its gradient is checked to be exactly zero
EXACT_ZERO = {"op/stop_gradient"}


def run_case(name, seed, tol=TOL):
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    with precision(np.float64):
        fn, leaves = CASES[name](rng)
        if name in EXACT_ZERO:
            out = fn()
            if out.requires_grad:
                return GradCheckResult(name, math.inf, 0, tol)
            return GradCheckResult(name, 0.0, sum(t.data.size for t in leaves), tol)
        return check_gradients(fn, leaves, tol=tol, max_coords=_max_coords(name), rng=rng, name=name)


def run_suite(seeds=range(10), names=None, tol=TOL) -> SuiteReport:
    t0 = time.perf_counter()
    names = list(CASES) if names is None else list(names)
    results = [run_case(n, s, tol) for s in seeds for n in names]
    return SuiteReport(results, time.perf_counter() - t0)


__all__ = ["CASES", "GradCheckResult", "SuiteReport", "run_case", "run_suite"]
