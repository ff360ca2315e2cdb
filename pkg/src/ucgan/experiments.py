"""Ring-of-Gaussians experiments: train a vector-mode system, then measure
mode coverage of its samples and the angle histogram of its encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import Config
from .data import gen_ring_gaussians, mode_coverage, ring_centers
from .latent import LatentSpaceKind, angle_histogram, histogram_entropy
from .trainer import train


@dataclass
class RingOutcome:
    seed: int
    covered: int
    hits: np.ndarray
    entropy: float | None  # nats, pooled angle histogram of E(x)
    bins: int
    result: object

    @property
    def entropy_ratio(self):
        return None if self.entropy is None else self.entropy / math.log(self.bins)


def ring_data(cfg: Config, seed=None):
    dc = cfg.data
    seed = cfg.train.seed if seed is None else seed
    return gen_ring_gaussians(dc.n_modes, dc.radius, dc.sigma, dc.n, seed)


def run_ring(cfg: Config, n_eval=10000, bins=36, out_dir=None, steps=None) -> RingOutcome:
    """Train on ring data seeded like the run, then evaluate.

    Coverage counts modes receiving at least 1% of ``n_eval`` samples within
    3 sigma of the center. Entropy is only reported for unit-complex latents.
    """
    points, _ = ring_data(cfg)
    res = train(cfg, points, out_dir=out_dir, steps=steps)
    rng = np.random.default_rng([cfg.train.seed, 5])
    samples = res.system.sample(n_eval, rng=rng)
    dc = cfg.data
    covered, hits = mode_coverage(samples, ring_centers(dc.n_modes, dc.radius), dc.sigma)
    entropy = None
    if LatentSpaceKind(cfg.latent.kind) is LatentSpaceKind.UNIT_COMPLEX:
        _, mass = angle_histogram(res.system.encode(points), bins)
        entropy = histogram_entropy(mass)
    return RingOutcome(cfg.train.seed, covered, hits, entropy, bins, res)
