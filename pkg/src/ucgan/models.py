"""Encoder, generator, discriminator and attribute classifier builders.

All networks are assembled from stride-1 convolutions, average pooling,
nearest-neighbour upsampling, dense layers and ELU. Image tensors are NHWC.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import CATALOG, FORBIDDEN, Tensor, ops
from .latent import LatentSpaceKind, latent_width, normalize_pairs


class ModelConfigError(ValueError):
    pass


@dataclass
class AttributeSpec:
    name: str
    kind: str  # "categorical" or "quantized"
    n: int

    def __post_init__(self):
        if self.kind not in ("categorical", "quantized"):
            raise ModelConfigError(f"unknown attribute kind {self.kind!r}")
        if self.n < 2:
            raise ModelConfigError(f"attribute {self.name} needs at least 2 classes")


def default_attributes(age_bins=10):
    return [
        AttributeSpec("gender", "categorical", 2),
        AttributeSpec("ethnicity", "categorical", 5),
        AttributeSpec("age_bin", "quantized", age_bins),
    ]


@dataclass
class ModelConfig:
    resolution: int = 32
    d: int = 16
    base_channels: int = 16
    channel_cap: int = 128
    attributes: list = field(default_factory=default_attributes)
    latent_kind: str = "unit-complex"
    mode: str = "image"
    data_dim: int = 2
    hidden: int = 64
    attr_width: float = 0.25
    dropout: float = 0.3

    def __post_init__(self):
        self.attributes = [a if isinstance(a, AttributeSpec) else AttributeSpec(**a) for a in self.attributes]
        self.latent_kind = LatentSpaceKind(self.latent_kind).value
        if self.mode not in ("image", "vector"):
            raise ModelConfigError(f"unknown model mode {self.mode!r}")
        if self.d < 1:
            raise ModelConfigError("latent dimension must be >= 1")
        if self.mode == "image":
            r = self.resolution
            if r < 8 or r & (r - 1):
                raise ModelConfigError(f"resolution must be a power of two >= 8, got {r}")
        if self.base_channels < 1 or self.channel_cap < 1 or self.hidden < 1:
            raise ModelConfigError("channel counts must be positive")

    @property
    def attr_dim(self):
        return sum(a.n for a in self.attributes)

    @property
    def z_dim(self):
        return latent_width(self.latent_kind, self.d)

    @property
    def n_blocks(self):
        return int(math.log2(self.resolution)) - 2

    def encoder_channels(self):
        return [min(self.base_channels * 2**i, self.channel_cap) for i in range(self.n_blocks)]

    def generator_channels(self):
        return [max(c // 2, 1) for c in reversed(self.encoder_channels())]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def full_scale(cls, **kw):
        """Preset matching the published 128x128 tables."""
        return cls(resolution=128, d=50, base_channels=64, channel_cap=1024, attr_width=1.0, **kw)


def encode_attributes(spec, labels):
    """One-hot attribute vectors from an (N, n_attrs) integer label array."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1, len(spec))
    parts = []
    for j, a in enumerate(spec):
        col = labels[:, j]
        if np.any(col < 0) or np.any(col >= a.n):
            raise ValueError(f"label for {a.name} out of range [0, {a.n})")
        parts.append(np.eye(a.n)[col])
    if not parts:
        return np.zeros((labels.shape[0], 0))
    return np.concatenate(parts, axis=1)


# ---------------------------------------------------------------------- layers


class RunContext:
    """Per-forward options: training flag, frozen parameters, dropout rng,
    conditioning vector and whether batch-norm running stats are updated."""

    def __init__(self, train=True, frozen=False, rng=None, cond=None, update_stats=None):
        self.train = train
        self.frozen = frozen
        self.rng = rng
        self.cond = cond
        self.update_stats = train and not frozen if update_stats is None else update_stats

    def p(self, t):
        return ops.stop_gradient(t) if self.frozen else t


class Layer:
    ops: tuple = ()

    def params(self):
        return {}

    def buffers(self):
        return {}

    def __call__(self, x, ctx):
        raise NotImplementedError


def _init(rng, shape, fan_in):
    return Tensor(rng.standard_normal(shape) * math.sqrt(1.0 / fan_in), requires_grad=True)


class Dense(Layer):
    ops = ("matmul", "add")

    def __init__(self, n_in, n_out, rng):
        self.n_in, self.n_out = n_in, n_out
        self.w = _init(rng, (n_in, n_out), n_in)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def params(self):
        return {"w": self.w, "b": self.b}

    def __call__(self, x, ctx):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"dense layer expects width {self.n_in}, got {x.shape[-1]}")
        return x @ ctx.p(self.w) + ctx.p(self.b)


class BatchNorm(Layer):
    ops = ("mean", "sub", "square", "add", "sqrt", "div", "mul")

    def __init__(self, channels, momentum=0.9, eps=1e-5):
        self.scale = Tensor(np.ones(channels), requires_grad=True)
        self.shift = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum
        self.eps = eps

    def params(self):
        return {"scale": self.scale, "shift": self.shift}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def __call__(self, x, ctx):
        axes = tuple(range(x.ndim - 1))
        if ctx.train:
            mu = x.mean(axis=axes, keepdims=True)
            centered = x - mu
            var = centered.square().mean(axis=axes, keepdims=True)
            if ctx.update_stats:
                m = self.momentum
                self.running_mean[:] = m * self.running_mean + (1 - m) * mu.data.reshape(-1)
                self.running_var[:] = m * self.running_var + (1 - m) * var.data.reshape(-1)
            xn = centered / (var + self.eps).sqrt()
        else:
            xn = (x - Tensor(self.running_mean)) / Tensor(np.sqrt(self.running_var + self.eps))
        return xn * ctx.p(self.scale) + ctx.p(self.shift)


class Conv(Layer):
    """3x3 stride-1 convolution, optionally followed by batch norm and ELU."""

    ops = ("conv2d", "add", "elu")

    def __init__(self, cin, cout, rng, norm=True, act=True, k=3):
        self.cin, self.cout = cin, cout
        self.w = _init(rng, (k, k, cin, cout), k * k * cin)
        self.b = None if norm else Tensor(np.zeros(cout), requires_grad=True)
        self.bn = BatchNorm(cout) if norm else None
        self.act = act
        if norm:
            self.ops = Conv.ops + BatchNorm.ops

    def params(self):
        out = {"w": self.w}
        if self.b is not None:
            out["b"] = self.b
        if self.bn is not None:
            out.update({f"bn/{k}": v for k, v in self.bn.params().items()})
        return out

    def buffers(self):
        return {f"bn/{k}": v for k, v in self.bn.buffers().items()} if self.bn else {}

    def __call__(self, x, ctx):
        y = ops.conv2d(x, ctx.p(self.w))
        if self.b is not None:
            y = y + ctx.p(self.b)
        if self.bn is not None:
            y = self.bn(y, ctx)
        return y.elu() if self.act else y


class AvgPool(Layer):
    ops = ("avg_pool",)

    def __init__(self, size=2, step=None, pad=0):
        self.size, self.step, self.pad = size, size if step is None else step, pad

    def __call__(self, x, ctx):
        return ops.avg_pool(x, self.size, self.step, self.pad)


class Upsample(Layer):
    ops = ("upsample",)

    def __call__(self, x, ctx):
        return ops.upsample(x, 2)


class Elu(Layer):
    ops = ("elu",)

    def __call__(self, x, ctx):
        return x.elu()


class Reshape(Layer):
    ops = ("reshape",)

    def __init__(self, shape):
        self.shape = tuple(shape)

    def __call__(self, x, ctx):
        return x.reshape((x.shape[0],) + self.shape)


class Flatten(Layer):
    ops = ("reshape",)

    def __call__(self, x, ctx):
        return x.reshape((x.shape[0], int(np.prod(x.shape[1:]))))


class PairNorm(Layer):
    ops = ("mul", "sum", "add", "sqrt", "div", "reshape")

    def __call__(self, x, ctx):
        return normalize_pairs(x)


class TanhBox(Layer):
    ops = ("tanh",)

    def __call__(self, x, ctx):
        return x.tanh()


class Squash(Layer):
    """Maps to [0, 1] with 0.5 * (tanh + 1)."""

    ops = ("tanh", "mul", "add")

    def __call__(self, x, ctx):
        return x.tanh() * 0.5 + 0.5


class Dropout(Layer):
    ops = ("mul",)

    def __init__(self, rate):
        self.rate = rate

    def __call__(self, x, ctx):
        if not ctx.train or self.rate <= 0:
            return x
        rng = ctx.rng if ctx.rng is not None else np.random.default_rng(0)
        keep = (rng.random(x.shape) >= self.rate) / (1 - self.rate)
        return x * Tensor(keep)


class CondVector(Layer):
    """Appends the conditioning vector to a (N, F) activation."""

    ops = ("concat",)

    def __call__(self, x, ctx):
        if ctx.cond is None or ctx.cond.shape[-1] == 0:
            return x
        return ops.concat([x, ctx.cond], axis=-1)


class CondPlanes(Layer):
    """Broadcasts the conditioning vector to spatial planes and appends them as channels."""

    ops = ("reshape", "mul", "concat")

    def __call__(self, x, ctx):
        if ctx.cond is None or ctx.cond.shape[-1] == 0:
            return x
        n, h, w, _ = x.shape
        a = ctx.cond.shape[-1]
        planes = ctx.cond.reshape((n, 1, 1, a)) * Tensor(np.ones((1, h, w, 1)))
        return ops.concat([x, planes], axis=-1)


# -------------------------------------------------------------------- networks


class Network:
    """Ordered layer list with optional named heads sharing the trunk."""

    def __init__(self, name, layers, heads=None, kind=""):
        self.name = name
        self.kind = kind
        self.layers = list(layers)
        self.heads = dict(heads or {})

    def _named_layers(self):
        for i, layer in enumerate(self.layers):
            yield f"{i}", layer
        for hname, hlayers in self.heads.items():
            for i, layer in enumerate(hlayers):
                yield f"{hname}/{i}", layer

    def all_layers(self):
        return [layer for _, layer in self._named_layers()]

    def named_parameters(self):
        out = {}
        for lname, layer in self._named_layers():
            for pname, t in layer.params().items():
                out[f"{self.name}/{lname}/{pname}"] = t
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def named_buffers(self):
        out = {}
        for lname, layer in self._named_layers():
            for bname, arr in layer.buffers().items():
                out[f"{self.name}/{lname}/{bname}"] = arr
        return out

    def state_dict(self):
        state = {k: t.data for k, t in self.named_parameters().items()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state, strict=True):
        params = self.named_parameters()
        buffers = self.named_buffers()
        missing = [k for k in list(params) + list(buffers) if k not in state]
        if strict and missing:
            raise KeyError(f"checkpoint lacks {missing[:3]}...")
        for k, t in params.items():
            if k in state:
                if state[k].shape != t.shape:
                    raise ValueError(f"{k}: shape {state[k].shape} != {t.shape}")
                t.data = np.asarray(state[k], dtype=t.data.dtype).copy()
        for k, arr in buffers.items():
            if k in state:
                arr[...] = state[k]

    def operators(self):
        names = set()
        for layer in self.all_layers():
            names.update(layer.ops)
        return names

    def __call__(self, x, cond=None, train=True, frozen=False, rng=None, update_stats=None):
        ctx = RunContext(train=train, frozen=frozen, rng=rng, cond=cond, update_stats=update_stats)
        if ctx.cond is not None and not isinstance(ctx.cond, Tensor):
            ctx.cond = Tensor(ctx.cond)
        if not isinstance(x, Tensor):
            x = Tensor(x)
        for layer in self.layers:
            x = layer(x, ctx)
        if not self.heads:
            return x
        out = {}
        for hname, hlayers in self.heads.items():
            h = x
            for layer in hlayers:
                h = layer(h, ctx)
            out[hname] = h
        return out


def audit_network(net):
    """Assert every operator is in the catalog and none is forbidden."""
    used = net.operators()
    unknown = used - set(CATALOG)
    if unknown:
        raise AssertionError(f"{net.name} uses operators outside the catalog: {sorted(unknown)}")
    bad = used & FORBIDDEN
    if bad:
        raise AssertionError(f"{net.name} uses forbidden operators: {sorted(bad)}")
    for layer in net.all_layers():
        if isinstance(layer, Conv) and layer.w.shape[0] % 2 == 0:
            raise AssertionError("even kernels would need asymmetric padding")
    return True


# ------------------------------------------------------------------- builders


def _latent_head(cfg):
    kind = LatentSpaceKind(cfg.latent_kind)
    if kind is LatentSpaceKind.UNIT_COMPLEX:
        return [PairNorm()]
    if kind is LatentSpaceKind.UNIFORM_BOX:
        return [TanhBox()]
    return []


def _encoder_trunk(cfg, rng):
    layers = []
    cin = 3
    for c in cfg.encoder_channels():
        layers += [Conv(cin, c, rng), Conv(c, c, rng), AvgPool(2), Conv(c, c, rng)]
        cin = c
    layers += [Flatten(), Dense(4 * 4 * cin, cfg.z_dim, rng)]
    return layers


def _decoder(cfg, rng, in_width, plane_extra, tail):
    top = cfg.encoder_channels()[-1]
    layers = [Dense(in_width, 4 * 4 * top, rng), Reshape((4, 4, top))]
    if plane_extra:
        layers.append(CondPlanes())
    cin = top + plane_extra
    for c in cfg.generator_channels():
        layers += [Conv(cin, c, rng), Conv(c, c, rng), Upsample()]
        cin = c
    if tail:
        layers += [
            Conv(cin, cin, rng),
            Upsample(),
            Conv(cin, cin, rng),
            Conv(cin, 3, rng, norm=False, act=False),
            AvgPool(3, 2, 1),
            Squash(),
        ]
    else:
        layers += [Conv(cin, 3, rng, norm=False, act=False), Squash()]
    return layers


def build_encoder(cfg: ModelConfig, rng=None) -> Network:
    rng = np.random.default_rng(0) if rng is None else rng
    if cfg.mode == "vector":
        h = cfg.hidden
        layers = [Dense(cfg.data_dim, h, rng), Elu(), Dense(h, h, rng), Elu(), Dense(h, cfg.z_dim, rng)]
    else:
        layers = _encoder_trunk(cfg, rng)
    return Network("E", layers + _latent_head(cfg), kind="encoder")


def build_generator(cfg: ModelConfig, rng=None) -> Network:
    rng = np.random.default_rng(0) if rng is None else rng
    a = cfg.attr_dim
    if cfg.mode == "vector":
        h = cfg.hidden
        layers = [CondVector(), Dense(cfg.z_dim + a, h, rng), Elu(), Dense(h, h, rng), Elu(), Dense(h, cfg.data_dim, rng)]
        return Network("G", layers, kind="generator")
    return Network("G", [CondVector()] + _decoder(cfg, rng, cfg.z_dim + a, 0, tail=True), kind="generator")


def build_discriminator(cfg: ModelConfig, rng=None) -> Network:
    rng = np.random.default_rng(0) if rng is None else rng
    a = cfg.attr_dim
    if cfg.mode == "vector":
        h = cfg.hidden
        layers = [
            Dense(cfg.data_dim, h, rng),
            Elu(),
            Dense(h, cfg.z_dim, rng),
            CondVector(),
            Dense(cfg.z_dim + a, h, rng),
            Elu(),
            Dense(h, cfg.data_dim, rng),
        ]
        return Network("D", layers, kind="discriminator")
    layers = _encoder_trunk(cfg, rng) + _decoder(cfg, rng, cfg.z_dim, a, tail=False)
    return Network("D", layers, kind="discriminator")


def classifier_channels(cfg):
    def scale(c):
        return max(8, int(round(c * cfg.attr_width)))

    blocks = [scale(c) for c in (16, 16, 32, 48, 64)][: cfg.n_blocks]
    if cfg.n_blocks > 5:
        blocks += [blocks[-1]] * (cfg.n_blocks - 5)
    return blocks, [scale(96), scale(128)], scale(192)


def build_attribute_classifier(cfg: ModelConfig, rng=None) -> Network:
    """Shared convolutional trunk with one head per attribute."""
    rng = np.random.default_rng(0) if rng is None else rng
    if cfg.mode != "image":
        raise ModelConfigError("the attribute classifier works on images")
    if not cfg.attributes:
        raise ModelConfigError("no attributes configured")
    blocks, trunk_tail, head_c = classifier_channels(cfg)
    layers = []
    cin = 3
    for c in blocks:
        layers += [Conv(cin, c, rng), AvgPool(2)]
        cin = c
    for c in trunk_tail:
        layers.append(Conv(cin, c, rng))
        cin = c
    heads = {}
    for attr in cfg.attributes:
        heads[attr.name] = [
            Conv(cin, head_c, rng),
            AvgPool(4, 1),
            Flatten(),
            Dense(head_c, head_c, rng),
            Elu(),
            Dropout(cfg.dropout),
            Dense(head_c, head_c, rng),
            Elu(),
            Dropout(cfg.dropout),
            Dense(head_c, attr.n, rng),
        ]
    return Network("A", layers, heads=heads, kind="classifier")


BUILDERS = {
    "E": build_encoder,
    "G": build_generator,
    "D": build_discriminator,
    "A": build_attribute_classifier,
}
