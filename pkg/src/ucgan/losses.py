"""Objective terms: cyclic histogram entropy, reconstruction distance, loss
max-pooling, latent identity, attribute losses, adaptive mixing and the
BEGAN balance controller.

Functions take and return autodiff Tensors unless noted otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, ops

LOG_EPS = 1e-12
YIQ_LUMA = (0.299, 0.587, 0.114)


# ------------------------------------------------------------ cyclic histogram


def histogram_nodes(k):
    return -math.pi + 2 * math.pi * np.arange(k) / k


@dataclass
class CyclicHistogram:
    k: int
    nodes: np.ndarray
    mass: Tensor

    def masses(self):
        return self.mass.data


def cyclic_histogram(angles, k=32):
    """Soft histogram of angles over ``k`` equally spaced nodes on the circle.

    Each angle deposits ``1/N`` split linearly between its two neighbouring
    nodes; the last node wraps to the first. ``angles`` of shape (N,) give a
    (k,) mass vector, shape (N, d) gives one histogram per column, (d, k).
    """
    angles = as_tensor(angles)
    if k < 2:
        raise ValueError("histogram needs at least 2 nodes")
    if angles.ndim not in (1, 2) or angles.shape[0] < 1:
        raise ValueError("cyclic_histogram needs a nonempty (N,) or (N, d) angle array")
    n = angles.shape[0]
    spacing = 2 * math.pi / k
    pos = (angles + math.pi) * (1.0 / spacing)
    base = np.floor(pos.data)
    lo = base.astype(np.int64) % k
    hi = (lo + 1) % k
    frac = pos - Tensor(base, dtype=pos.dtype)
    eye = np.eye(k)
    lo_hot = Tensor(eye[lo] / n)
    hi_hot = Tensor(eye[hi] / n)
    f = frac.reshape(frac.shape + (1,))
    mass = (lo_hot * (1.0 - f) + hi_hot * f).sum(axis=0)
    if angles.ndim == 2:
        mass = mass.reshape((angles.shape[1], k))
    return CyclicHistogram(k, histogram_nodes(k), mass)


def entropy_loss(hist):
    """Negative entropy sum(h ln(h + eps)); per-row average for stacked histograms."""
    h = hist.mass if isinstance(hist, CyclicHistogram) else as_tensor(hist)
    neg = (h * (h + LOG_EPS).log()).sum(axis=-1)
    return neg.mean() if neg.ndim else neg


# ---------------------------------------------------------------- reconstruction


def _central_difference_matrix(n):
    m = np.zeros((n, n))
    for i in range(n):
        m[i, min(i + 1, n - 1)] += 0.5
        m[i, max(i - 1, 0)] -= 0.5
    return m


def gradient_magnitude(luma):
    """L1 gradient magnitude |dY/du| + |dY/dv| of a (…, H, W) luma map.

    Central differences with replicated borders, written as matrix products.
    """
    h, w = luma.shape[-2:]
    du = Tensor(_central_difference_matrix(h)) @ luma
    dv = luma @ Tensor(_central_difference_matrix(w).T)
    return du.abs() + dv.abs()


def recon_image_loss(x, y):
    """Per-pixel distance sum_c 2|x_c - y_c| + |m_x - m_y| over RGB images.

    Accepts (H, W, 3) or (N, H, W, 3) and returns (H, W) or (N, H, W).
    """
    x = as_tensor(x)
    y = as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if x.shape[-1] != 3:
        raise ValueError("images must have 3 channels")
    color = 2.0 * (x - y).abs().sum(axis=-1)
    luma_w = Tensor(np.array(YIQ_LUMA).reshape(3, 1))
    lead = x.shape[:-1]
    lx = (x @ luma_w).reshape(lead)
    ly = (y @ luma_w).reshape(lead)
    return color + (gradient_magnitude(lx) - gradient_magnitude(ly)).abs()


def recon_vector_loss(x, y):
    """Vector-mode counterpart: 2 * L1 over coordinates, one value per row."""
    x = as_tensor(x)
    y = as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"shapes differ: {x.shape} vs {y.shape}")
    return 2.0 * (x - y).abs().sum(axis=-1)


def loss_max_pool(pixel_losses, keep_ratio=0.3):
    """Mean of the largest ceil(q*M) entries of the merged loss set.

    All entries, across every image in the batch, compete for selection.
    """
    losses = as_tensor(pixel_losses)
    total = losses.data.size
    if total == 0:
        raise ValueError("loss_max_pool got an empty loss set")
    if not 0 < keep_ratio <= 1:
        raise ValueError("keep_ratio must lie in (0, 1]")
    keep = min(total, max(1, math.ceil(keep_ratio * total - 1e-9)))
    flat = losses.data.reshape(-1)
    order = np.argsort(-flat, kind="stable")
    mask = np.zeros(total)
    mask[order[:keep]] = 1.0 / keep
    return (losses * Tensor(mask.reshape(losses.shape))).sum()


# ----------------------------------------------------------------- latent terms


def latent_identity_loss(z_target, z_pred):
    """Mean squared chordal distance between matching unit pairs.

    Equals 2(1 - cos of the angle difference) per pair, so it lies in [0, 4].
    """
    z_target = as_tensor(z_target)
    z_pred = as_tensor(z_pred)
    if z_target.shape != z_pred.shape:
        raise ValueError(f"latent shapes differ: {z_target.shape} vs {z_pred.shape}")
    if z_target.shape[-1] % 2:
        raise ValueError("latent width must be even")
    diff = (z_target - z_pred).square()
    lead = diff.shape[:-1]
    per_pair = diff.reshape(lead + (diff.shape[-1] // 2, 2)).sum(axis=-1)
    return per_pair.mean()


# ------------------------------------------------------------- attribute losses


def _labels(y, batch, k):
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape[0] != batch:
        raise ValueError(f"{y.shape[0]} labels for batch of {batch}")
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"label out of range [0, {k})")
    return y


def _as_batch(logits):
    logits = as_tensor(logits)
    if logits.ndim == 1:
        return logits.reshape((1, logits.shape[0])), True
    return logits, False


def locality_loss(logits, true_bin, beta=1.0):
    """Expected |i - y| under softmax(beta * logits), batch-averaged."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    logits, _ = _as_batch(logits)
    n, k = logits.shape
    y = _labels(true_bin, n, k)
    dist = np.abs(np.arange(k)[None, :] - y[:, None]).astype(np.float64)
    p = (logits * beta).softmax(axis=-1)
    return (p * Tensor(dist)).sum(axis=-1).mean()


def softargmax(logits, beta=1.0):
    """Expected index under softmax(beta * logits); one value per row."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    logits = as_tensor(logits)
    k = logits.shape[-1]
    p = (logits * beta).softmax(axis=-1)
    return (p * Tensor(np.arange(k, dtype=np.float64))).sum(axis=-1)


def focal_loss(probs, true_class, gamma=2.0):
    """-(1 - p_t)^gamma * ln(p_t + eps), batch-averaged."""
    if gamma < 0:
        raise ValueError("focusing exponent must be >= 0")
    probs, _ = _as_batch(probs)
    n, k = probs.shape
    y = _labels(true_class, n, k)
    p_t = (probs * Tensor(np.eye(k)[y])).sum(axis=-1)
    ce = -(p_t + LOG_EPS).log()
    if gamma == 0:
        return ce.mean()
    q = 1.0 - p_t
    if float(gamma).is_integer():
        w = q
        for _ in range(int(gamma) - 1):
            w = w * q
    else:
        w = ((q + LOG_EPS).log() * gamma).exp()
    return (w * ce).mean()


def cross_entropy(logits, true_class):
    return focal_loss(as_tensor(logits).softmax(axis=-1), true_class, gamma=0.0)


# --------------------------------------------------------------- adaptive mixing


@dataclass
class LossMixerState:
    """Exponentially smoothed loss magnitudes plus learnable weights."""

    n: int
    rho: float = 0.99
    smoothed: np.ndarray | None = None
    gamma: Tensor = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("mixer needs at least one loss")
        if not 0 < self.rho < 1:
            raise ValueError("smoothing factor must be in (0, 1)")
        if self.gamma is None:
            self.gamma = Tensor(np.ones(self.n), requires_grad=True, name="gamma")

    def weights(self):
        s = self.smoothed
        return s.sum() / (self.n * s)


SMOOTH_FLOOR = 1e-12


def adaptive_mix(state: LossMixerState, values, update=True):
    """Mix loss values with smoothed-magnitude weights and learnable gammas.

    The smoothed state is advanced with the current values first (and
    initialised from them on the first call). The weights are constants for
    differentiation; gradients reach both the values and the gammas.
    """
    values = [as_tensor(v) for v in values]
    if len(values) != state.n:
        raise ValueError(f"mixer expects {state.n} values, got {len(values)}")
    v_now = np.array([float(v.data) for v in values], dtype=np.float64)
    if np.any(v_now < 0):
        raise ValueError("mixed losses must be nonnegative")
    g2 = state.gamma.data.astype(np.float64) ** 2
    if not np.any(g2 > 0):
        raise ValueError("all mixing gammas are zero")
    if update:
        if state.smoothed is None:
            state.smoothed = v_now.copy()
        else:
            state.smoothed = state.rho * state.smoothed + (1 - state.rho) * v_now
        state.smoothed = np.maximum(state.smoothed, SMOOTH_FLOOR)
    elif state.smoothed is None:
        raise ValueError("mixer has no smoothed values yet")
    w = state.weights()
    g_sq = state.gamma.square()
    stacked = ops.concat([v.reshape((1,)) for v in values], axis=0)
    num = (g_sq * stacked * Tensor(w)).sum()
    return num / g_sq.sum()


# ---------------------------------------------------------------- BEGAN balance


@dataclass
class BeganState:
    k: float = 0.0
    lambda_k: float = 0.001
    gamma: float = 0.7
    convergence: float = float("nan")


def began_update(state: BeganState, loss_real, loss_fake):
    """BEGAN objectives and proportional control of k.

    Returns (discriminator loss, generator loss) built with the k value in
    force before the update; ``state`` is then advanced in place.
    """
    real_v = float(getattr(loss_real, "data", loss_real))
    fake_v = float(getattr(loss_fake, "data", loss_fake))
    if real_v < 0 or fake_v < 0:
        raise ValueError("BEGAN reconstruction losses must be nonnegative")
    loss_real = as_tensor(loss_real)
    loss_fake = as_tensor(loss_fake)
    d_loss = loss_real - state.k * loss_fake
    g_loss = loss_fake
    balance = state.gamma * real_v - fake_v
    state.k = min(max(state.k + state.lambda_k * balance, 0.0), 1.0)
    state.convergence = real_v + abs(balance)
    return d_loss, g_loss
