"""Attribute-classifier pretraining and the simultaneous E/G/D training step."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from .autodiff import Adam, NonFiniteError, Tensor, checkpoint, grad, ops
from .config import Config
from .data import iterate_minibatches
from .latent import LatentSpaceKind, angles_of, sample_codes
from .models import (
    Network,
    build_attribute_classifier,
    build_discriminator,
    build_encoder,
    build_generator,
    encode_attributes,
)

log = logging.getLogger(__name__)

TERMS = ("began", "eq3", "eq8a", "eq8b", "entropy", "attr")
METRIC_COLUMNS = ("step", "L_real", "L_fake", "L_D", "L_G", "eq3", "eq8a", "eq8b", "entropy", "attr", "k_t", "M_t")


class TrainingError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class StepReport:
    step: int
    L_real: float = 0.0
    L_fake: float = 0.0
    L_D: float = 0.0
    L_G: float = 0.0
    eq3: float = 0.0
    eq8a: float = 0.0
    eq8b: float = 0.0
    entropy: float = 0.0
    attr: float = 0.0
    k_t: float = 0.0
    M_t: float = 0.0
    gammas: list = field(default_factory=list)
    wall_ms: float = 0.0
    encoder_leak: float | None = None

    def values(self):
        return [getattr(self, c) for c in METRIC_COLUMNS[1:]] + list(self.gammas)

    def is_finite(self):
        return all(math.isfinite(v) for v in self.values())

    def row(self):
        return [self.step] + [f"{v:.9g}" for v in self.values()] + [f"{self.wall_ms:.3f}"]


def metric_header(n_gammas):
    return list(METRIC_COLUMNS) + [f"gamma_{i}" for i in range(n_gammas)] + ["wall_ms"]


def _sample_labels(attributes, n, rng):
    if not attributes:
        return np.zeros((n, 0), dtype=np.int64)
    return np.stack([rng.integers(a.n, size=n) for a in attributes], axis=1)


def latent_distance(kind, target, pred):
    if LatentSpaceKind(kind) is LatentSpaceKind.UNIT_COMPLEX:
        return L.latent_identity_loss(target, pred)
    return (target - pred).square().mean()


class GanSystem:
    """Encoder, generator and discriminator with their optimizers and
    controller states. ``classifier`` is a pretrained attribute network used
    frozen for guidance."""

    def __init__(self, cfg: Config, classifier: Network | None = None):
        self.cfg = cfg
        self.model_cfg = cfg.model_config()
        init_rng = np.random.default_rng(cfg.train.seed)
        self.E = build_encoder(self.model_cfg, init_rng)
        self.G = build_generator(self.model_cfg, init_rng)
        self.D = build_discriminator(self.model_cfg, init_rng)
        self.A = classifier
        t = cfg.train
        adam = dict(lr=t.lr, beta1=t.beta1, beta2=t.beta2, eps=t.eps, decay_rate=t.decay_rate, decay_steps=t.decay_steps)
        self.mixer = L.LossMixerState(4, rho=cfg.losses.mixer_rho) if cfg.losses.use_mixer else None
        g_params = self.G.parameters() + ([self.mixer.gamma] if self.mixer else [])
        self.opt = {
            "E": Adam(self.E.parameters(), **adam),
            "G": Adam(g_params, **adam),
            "D": Adam(self.D.parameters(), **adam),
        }
        self.began = L.BeganState(k=0.0, lambda_k=cfg.losses.began_lambda, gamma=cfg.losses.began_gamma)
        self.rng = np.random.default_rng([cfg.train.seed, 1])
        self.step = 0

    @property
    def attributes(self):
        return self.model_cfg.attributes

    def networks(self):
        return {"E": self.E, "G": self.G, "D": self.D}

    def state_dict(self):
        state = {}
        for net in self.networks().values():
            state.update(net.state_dict())
        return state

    def load_state_dict(self, state):
        for net in self.networks().values():
            net.load_state_dict({k: v for k, v in state.items() if k.startswith(net.name + "/")})

    def sample(self, n, labels=None, rng=None):
        """Generate ``n`` outputs for random latents (eval mode, numpy result)."""
        rng = self.rng if rng is None else rng
        z = sample_codes(self.model_cfg.latent_kind, self.model_cfg.d, rng, n)
        if labels is None:
            labels = _sample_labels(self.attributes, n, rng)
        cond = encode_attributes(self.attributes, labels) if self.attributes else None
        return self.G(z, cond=cond, train=False).data

    def encode(self, x, train=False):
        return self.E(x, train=train).data


def gan_step(system: GanSystem, x, labels=None, *, terms=TERMS, z=None, rand_labels=None,
             order=("E", "G", "D"), audit_isolation=False) -> StepReport:
    """One simultaneous update of E, G and D.

    Every gradient is computed from the parameter values at entry; the three
    optimizers are applied afterwards in ``order``, which therefore does not
    affect the result. Raises TrainingError on non-finite losses, leaving
    parameters and the BEGAN state untouched.
    """
    k_before = system.began.k
    try:
        return _gan_step(system, x, labels, terms=terms, z=z, rand_labels=rand_labels, order=order,
                         audit_isolation=audit_isolation)
    except NonFiniteError as exc:
        system.began.k = k_before
        report = StepReport(step=system.step, k_t=k_before)
        raise TrainingError(f"non-finite value at step {system.step}: {exc}", report) from exc


def _gan_step(system, x, labels, *, terms, z, rand_labels, order, audit_isolation):
    t0 = time.perf_counter()
    cfg = system.cfg
    lc = cfg.losses
    mc = system.model_cfg
    kind = mc.latent_kind
    terms = set(terms)
    rng = system.rng
    n = len(x)
    image_mode = mc.mode == "image"
    recon = L.recon_image_loss if image_mode else L.recon_vector_loss

    def pooled(a, b):
        return L.loss_max_pool(recon(a, b), lc.keep_ratio)

    if z is None:
        z = sample_codes(kind, mc.d, rng, n)
    if labels is None:
        labels = np.zeros((n, 0), dtype=np.int64)
    if rand_labels is None:
        rand_labels = _sample_labels(system.attributes, n, rng)
    cond_real = Tensor(encode_attributes(system.attributes, labels)) if system.attributes else None
    cond_rand = Tensor(encode_attributes(system.attributes, rand_labels)) if system.attributes else None

    E, G, D = system.E, system.G, system.D
    x = Tensor(x)
    z = Tensor(z)
    zero = Tensor(0.0)

    # encoder sees real samples only
    z_real = E(x)
    fake = G(z, cond=cond_rand)

    loss_real = pooled(x, D(x, cond=cond_real))
    loss_fake = pooled(fake, D(fake, cond=cond_rand))
    k_before = system.began.k
    if "began" in terms:
        d_loss, g_loss = L.began_update(system.began, loss_real, loss_fake)
    else:
        d_loss, g_loss = zero, zero

    eq3 = pooled(x, G(z_real, cond=cond_real)) if "eq3" in terms else zero

    eq8a = eq8b = zero
    if "eq8a" in terms:
        eq8a = latent_distance(kind, z, E(fake, frozen=True, update_stats=False))
    if "eq8b" in terms:
        z_fixed = ops.stop_gradient(z_real)
        again = E(G(z_fixed, cond=cond_real), frozen=True, update_stats=False)
        eq8b = latent_distance(kind, z_fixed, again)

    entropy = zero
    if "entropy" in terms and LatentSpaceKind(kind) is LatentSpaceKind.UNIT_COMPLEX:
        entropy = L.entropy_loss(L.cyclic_histogram(angles_of(z_real), lc.hist_bins))

    attr = zero
    if "attr" in terms and system.A is not None and system.attributes:
        heads = system.A(fake, train=False, frozen=True)
        for j, a in enumerate(system.attributes):
            attr = attr + L.cross_entropy(heads[a.name], rand_labels[:, j])

    aux = [(lc.w_eq3, eq3), (lc.w_eq8a, eq8a), (lc.w_eq8b, eq8b), (lc.w_attr, attr)]
    if system.mixer is not None:
        g_aux = L.adaptive_mix(system.mixer, [w * v for w, v in aux])
    else:
        g_aux = sum((w * v for w, v in aux), zero)
    objectives = {
        "D": d_loss,
        "G": g_loss + g_aux,
        "E": lc.w_eq3 * eq3 + lc.w_entropy * entropy,
    }

    report = StepReport(
        step=system.step,
        L_real=float(loss_real.data),
        L_fake=float(loss_fake.data),
        L_D=float(d_loss.data),
        L_G=float(g_loss.data),
        eq3=float(eq3.data),
        eq8a=float(eq8a.data),
        eq8b=float(eq8b.data),
        entropy=float(entropy.data),
        attr=float(attr.data),
        k_t=system.began.k,
        M_t=system.began.convergence if "began" in terms else 0.0,
        gammas=[float(g) for g in system.mixer.gamma.data] if system.mixer else [],
    )
    if not report.is_finite() or not all(np.isfinite(float(o.data)) for o in objectives.values()):
        system.began.k = k_before
        raise TrainingError(f"non-finite loss at step {system.step}: {report}", report)

    try:
        grads = {name: grad(objectives[name], system.opt[name].params) for name in ("E", "G", "D")}
        if audit_isolation:
            generated = g_loss + eq8a + eq8b + attr
            leak = grad(generated, E.parameters())
            report.encoder_leak = float(max((np.abs(g).max() for g in leak), default=0.0))
    except NonFiniteError as exc:
        system.began.k = k_before
        raise TrainingError(f"non-finite gradient at step {system.step}: {exc}", report) from exc

    for name in order:
        system.opt[name].step(grads[name])
    system.step += 1
    report.wall_ms = 1000 * (time.perf_counter() - t0)
    report._grads = grads  # exposed for tests; not part of the metrics
    return report


@dataclass
class TrainResult:
    system: GanSystem
    reports: list
    metrics_path: Path | None
    checkpoint_path: Path | None


def save_checkpoint(path, system: GanSystem):
    checkpoint.save(path, system.state_dict())


def load_system(cfg: Config, path) -> GanSystem:
    system = GanSystem(cfg)
    system.load_state_dict(checkpoint.load(path))
    return system


def train(cfg: Config, x, labels=None, out_dir=None, classifier=None, steps=None, terms=TERMS,
          audit_isolation=False, progress=None) -> TrainResult:
    """Run ``steps`` (default cfg.train.steps) GAN steps on the arrays ``x``/``labels``.

    With ``out_dir`` a metrics CSV (one row per step) and checkpoints every
    ``checkpoint_every`` steps plus a final one are written.
    """
    steps = cfg.train.steps if steps is None else steps
    system = GanSystem(cfg, classifier=classifier)
    data_rng = np.random.default_rng([cfg.train.seed, 2])
    batches = iterate_minibatches(len(x), cfg.train.batch_size, data_rng)
    x = np.asarray(x, dtype=np.float32)
    out = Path(out_dir) if out_dir is not None else None
    writer = fh = None
    metrics_path = ckpt_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(metric_header(4 if system.mixer else 0))
    reports = []
    try:
        for i in range(steps):
            idx = next(batches)
            lab = labels[idx] if labels is not None else None
            rep = gan_step(system, x[idx], lab, terms=terms, audit_isolation=audit_isolation)
            del rep._grads
            reports.append(rep)
            if writer is not None:
                writer.writerow(rep.row())
            every = cfg.train.checkpoint_every
            if out is not None and every and (i + 1) % every == 0:
                save_checkpoint(out / f"checkpoint_{i + 1:06d}.ucg", system)
            if progress and (i + 1) % progress == 0:
                log.info("step %d L_real=%.4f L_fake=%.4f k=%.4f M=%.4f", i + 1, rep.L_real, rep.L_fake, rep.k_t, rep.M_t)
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        ckpt_path = out / "final.ucg"
        save_checkpoint(ckpt_path, system)
    return TrainResult(system, reports, metrics_path, ckpt_path)


# ------------------------------------------------------- attribute classifier


def augment(images, rng, shift=2, noise=0.02):
    """Random horizontal flip, integer shift with edge replication and pixel noise."""
    out = np.empty_like(images)
    n, h, w, _ = images.shape
    flips = rng.random(n) < 0.5
    shifts = rng.integers(-shift, shift + 1, size=(n, 2)) if shift else np.zeros((n, 2), int)
    for i in range(n):
        img = images[i, :, ::-1] if flips[i] else images[i]
        dy, dx = shifts[i]
        rows = np.clip(np.arange(h) - dy, 0, h - 1)
        cols = np.clip(np.arange(w) - dx, 0, w - 1)
        out[i] = img[rows][:, cols]
    if noise:
        out = out + rng.normal(0.0, noise, size=out.shape).astype(out.dtype)
    return out


def contractive_penalty(fn, x, sigma, rng):
    """Stochastic estimate of the squared Frobenius norm of the Jacobian of ``fn``.

    Uses one random unit direction u per sample:
    mean ||(fn(x + sigma*u) - fn(x)) / sigma||^2.
    """
    x = np.asarray(x)
    u = rng.standard_normal(x.shape)
    norms = np.sqrt((u.reshape(len(x), -1) ** 2).sum(axis=1)).reshape((-1,) + (1,) * (x.ndim - 1))
    u = u / norms
    base = fn(Tensor(x))
    moved = fn(Tensor(x + sigma * u))
    diff = (moved - base) * (1.0 / sigma)
    return diff.square().reshape((len(x), -1)).sum(axis=-1).mean()


def classifier_probabilities(heads, attributes):
    return ops.concat([heads[a.name].softmax(axis=-1) for a in attributes], axis=-1)


def attribute_terms(heads, labels, attributes, lc):
    """Per-head loss terms: focal loss for every head, plus softargmax
    regression and locality loss for quantized heads."""
    out = []
    for j, a in enumerate(attributes):
        logits = heads[a.name]
        y = labels[:, j]
        out.append(L.focal_loss(logits.softmax(axis=-1), y, lc.focal_gamma))
        if a.kind == "quantized":
            pred = L.softargmax(logits, lc.locality_beta)
            out.append((pred - Tensor(y.astype(np.float64))).square().mean() * (1.0 / a.n))
            out.append(L.locality_loss(logits, y, lc.locality_beta))
    return out


def predict_labels(A: Network, images, attributes, batch=256):
    preds = []
    for s in range(0, len(images), batch):
        heads = A(images[s : s + batch], train=False)
        preds.append(np.stack([heads[a.name].data.argmax(axis=-1) for a in attributes], axis=1))
    return np.concatenate(preds)


def attribute_accuracy(A: Network, images, labels, attributes):
    pred = predict_labels(A, images, attributes)
    return {a.name: float((pred[:, j] == labels[:, j]).mean()) for j, a in enumerate(attributes)}


@dataclass
class PretrainResult:
    classifier: Network
    history: list
    mixer: L.LossMixerState


def pretrain_attribute_classifier(images, labels, cfg: Config, steps=None, lr=None) -> PretrainResult:
    """Train the attribute classifier on its own, then return it frozen.

    Loss terms are combined with the adaptive mixer; a contractive penalty
    on the class probabilities is added on top.
    """
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    mc = cfg.model_config()
    attrs = mc.attributes
    if labels.ndim != 2 or labels.shape[1] != len(attrs):
        raise ValueError(f"expected labels for {len(attrs)} attributes, got shape {labels.shape}")
    if len(labels) != len(images):
        raise ValueError("one label row per image required")
    t = cfg.train
    lc = cfg.losses
    steps = t.attr_steps if steps is None else steps
    rng = np.random.default_rng([t.seed, 3])
    A = build_attribute_classifier(mc, np.random.default_rng([t.seed, 4]))
    n_terms = sum(3 if a.kind == "quantized" else 1 for a in attrs)
    mixer = L.LossMixerState(n_terms, rho=lc.mixer_rho)
    opt = Adam(A.parameters() + [mixer.gamma], lr=t.attr_lr if lr is None else lr, beta1=t.beta1, beta2=t.beta2,
               eps=t.eps, decay_rate=t.decay_rate, decay_steps=t.decay_steps)
    batches = iterate_minibatches(len(images), t.batch_size, rng)
    history = []
    for step in range(steps):
        idx = next(batches)
        x = augment(images[idx], rng, t.aug_shift, t.aug_noise)
        y = labels[idx]
        seed = int(rng.integers(2**31))
        heads = A(x, train=True, rng=np.random.default_rng(seed))
        terms = attribute_terms(heads, y, attrs, lc)
        total = L.adaptive_mix(mixer, terms)
        pen = Tensor(0.0)
        if t.contractive_weight > 0:
            def probs(inp):
                h = A(inp, train=True, rng=np.random.default_rng(seed), update_stats=False)
                return classifier_probabilities(h, attrs)
            pen = contractive_penalty(probs, x, t.contractive_sigma, rng)
            total = total + t.contractive_weight * pen
        if not np.isfinite(float(total.data)):
            raise TrainingError(f"non-finite classifier loss at step {step}")
        opt.step(grad(total, opt.params))
        history.append({"step": step, "loss": float(total.data), "penalty": float(pen.data),
                        "terms": [float(v.data) for v in terms]})
    return PretrainResult(A, history, mixer)
