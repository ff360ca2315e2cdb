"""Unit-complex latent space and the baseline spaces it is compared against.

A code with ``d`` dimensions is stored as ``2d`` numbers, consecutive
``(x, y)`` pairs on the unit circle. The effective coordinate of each pair is
its angle.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from .autodiff import Tensor, ops

PAIR_EPS = 1e-8


class LatentSpaceKind(str, enum.Enum):
    UNIT_COMPLEX = "unit-complex"
    UNIFORM_BOX = "uniform-box"
    GAUSSIAN = "gaussian"


class LatentCodeError(ValueError):
    pass


def _split_pairs(values):
    values = np.asarray(values)
    if values.shape[-1] % 2:
        raise LatentCodeError(f"latent vector length {values.shape[-1]} is odd")
    return values.reshape(values.shape[:-1] + (values.shape[-1] // 2, 2))


def pairs_of(angles):
    """(…, d) angles -> (…, 2d) interleaved (cos, sin) values."""
    angles = np.asarray(angles, dtype=np.float64)
    out = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    return out.reshape(angles.shape[:-1] + (2 * angles.shape[-1],))


def sample_latent(d, rng, n=None, angles=None):
    """Draw unit-complex codes: one uniform angle on [-pi, pi] per dimension.

    Returns shape (2d,) or (n, 2d). ``angles`` forces the angles instead of
    sampling them.
    """
    if d < 1:
        raise LatentCodeError("latent dimension must be >= 1")
    if angles is None:
        shape = (d,) if n is None else (n, d)
        angles = rng.uniform(-math.pi, math.pi, size=shape)
    return pairs_of(angles)


def normalize_pairs(raw):
    """Scale each (x, y) pair to unit length; differentiable for Tensors.

    A zero pair stays zero thanks to the epsilon in the denominator.
    """
    if isinstance(raw, Tensor):
        if raw.shape[-1] % 2:
            raise LatentCodeError(f"latent vector length {raw.shape[-1]} is odd")
        lead = raw.shape[:-1]
        d = raw.shape[-1] // 2
        p = raw.reshape(lead + (d, 2))
        norm = ((p * p).sum(axis=-1, keepdims=True) + PAIR_EPS).sqrt()
        return (p / norm).reshape(lead + (2 * d,))
    p = _split_pairs(raw).astype(np.float64)
    norm = np.sqrt((p * p).sum(axis=-1, keepdims=True) + PAIR_EPS)
    return (p / norm).reshape(np.shape(raw))


def angles_of(code):
    """Angle of each pair in (-pi, pi]; differentiable for Tensors."""
    if isinstance(code, Tensor):
        if code.shape[-1] % 2:
            raise LatentCodeError(f"latent vector length {code.shape[-1]} is odd")
        lead = code.shape[:-1]
        d = code.shape[-1] // 2
        p = code.reshape(lead + (d, 2))
        x = p @ Tensor(np.array([[1.0], [0.0]]))
        y = p @ Tensor(np.array([[0.0], [1.0]]))
        return ops.atan2(y, x).reshape(lead + (d,))
    p = _split_pairs(code)
    return np.arctan2(p[..., 1], p[..., 0])


def check_code(code, tol=1e-5):
    """Raise LatentCodeError unless every pair lies on the unit circle."""
    values = code.data if isinstance(code, Tensor) else code
    p = _split_pairs(values)
    r = np.sqrt((p.astype(np.float64) ** 2).sum(axis=-1))
    worst = float(np.max(np.abs(r - 1))) if r.size else 0.0
    if worst > tol:
        raise LatentCodeError(f"pair norm deviates from 1 by {worst:.3g}")
    return True


def sample_baseline(kind, d, rng, n=None):
    """Raw latent vectors from the uniform box U[-1, 1] or N(0, 1)."""
    kind = LatentSpaceKind(kind)
    shape = (d,) if n is None else (n, d)
    if kind is LatentSpaceKind.UNIFORM_BOX:
        return rng.uniform(-1.0, 1.0, size=shape)
    if kind is LatentSpaceKind.GAUSSIAN:
        return rng.standard_normal(size=shape)
    raise LatentCodeError("unit-complex codes come from sample_latent")


def latent_width(kind, d):
    """Number of reals the generator consumes for ``d`` latent dimensions."""
    return 2 * d if LatentSpaceKind(kind) is LatentSpaceKind.UNIT_COMPLEX else d


def sample_codes(kind, d, rng, n):
    kind = LatentSpaceKind(kind)
    if kind is LatentSpaceKind.UNIT_COMPLEX:
        return sample_latent(d, rng, n=n)
    return sample_baseline(kind, d, rng, n=n)


def angle_histogram(codes, bins=36):
    """Hard histogram of all pair angles pooled over dimensions.

    Returns (bin edges, mass) with mass summing to 1.
    """
    if bins < 1:
        raise ValueError("bins must be positive")
    ang = angles_of(np.asarray(codes, dtype=np.float64)).ravel()
    if ang.size == 0:
        raise LatentCodeError("no angles to histogram")
    counts, edges = np.histogram(ang, bins=bins, range=(-np.pi, np.pi))
    return edges, counts / counts.sum()


def histogram_entropy(mass):
    """Shannon entropy (nats) of a discrete distribution; empty bins contribute 0."""
    p = np.asarray(mass, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())
