"""Birthday-paradox support-size estimation.

Samples are embedded, the closest pairs inspected, and a pair closer than a
threshold counts as a duplicate. The batch size N doubles until duplicates
show up in at least ``p_star`` of the trials; the support is then about N^2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import write_ppm


class DiversityError(RuntimeError):
    pass


@dataclass
class EmbeddingSpec:
    """How samples become vectors. ``raw-pixel`` flattens; ``encoder-bottleneck``
    applies ``encoder`` (a callable on a sample batch)."""

    kind: str = "raw-pixel"
    encoder: object = None
    dim: int | None = None

    def __post_init__(self):
        if self.kind not in ("raw-pixel", "encoder-bottleneck"):
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        if self.kind == "encoder-bottleneck" and self.encoder is None:
            raise ValueError("encoder-bottleneck embedding needs an encoder")

    def __call__(self, samples):
        samples = np.asarray(samples)
        if self.kind == "raw-pixel":
            emb = samples.reshape(len(samples), -1)
        else:
            emb = np.asarray(self.encoder(samples)).reshape(len(samples), -1)
        emb = emb.astype(np.float64)
        if self.dim is None:
            self.dim = emb.shape[1]
        elif emb.shape[1] != self.dim:
            raise DiversityError(f"embedding dimension changed from {self.dim} to {emb.shape[1]}")
        return emb


def pairwise_sq_distances(emb):
    """Condensed upper-triangle squared distances with their (i, j) indices."""
    emb = np.asarray(emb, dtype=np.float64)
    n = len(emb)
    rows, cols, dist = [], [], []
    for i in range(n - 1):
        d = ((emb[i + 1 :] - emb[i]) ** 2).sum(axis=1)
        rows.append(np.full(n - 1 - i, i))
        cols.append(np.arange(i + 1, n))
        dist.append(d)
    if not dist:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(dist)


def top_k_pairs(embeddings, k):
    """The k closest pairs as (i, j, squared distance), ties broken by (i, j)."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2:
        emb = emb.reshape(len(emb), -1)
    n = len(emb)
    if n < 2:
        raise DiversityError("need at least two samples to form pairs")
    total = n * (n - 1) // 2
    if not 1 <= k <= total:
        raise DiversityError(f"k must lie in [1, {total}], got {k}")
    i, j, d = pairwise_sq_distances(emb)
    order = np.lexsort((j, i, d))[:k]
    return [(int(i[o]), int(j[o]), float(d[o])) for o in order]


def duplicate_decision(distance, threshold):
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    return bool(distance < threshold)


def calibrate_threshold(embeddings, percentile=1.0):
    """Percentile of the pairwise squared distances among real samples.

    Exact repeats (distance 0) are left out, so data drawn from a finite
    template set still yields a usable threshold.
    """
    _, _, d = pairwise_sq_distances(embeddings)
    d = d[d > 0]
    if d.size == 0:
        raise DiversityError("need at least two distinct samples to calibrate")
    return float(np.percentile(d, percentile))


def oracle_threshold(templates):
    """Half the minimum squared distance between distinct known templates."""
    _, _, d = pairwise_sq_distances(np.asarray(templates).reshape(len(templates), -1))
    return 0.5 * float(d.min())


def exact_birthday_probability(m, n):
    """Probability that n uniform draws from m items contain a repeat."""
    if n > m:
        return 1.0
    return 1.0 - math.prod((m - i) / m for i in range(n))


@dataclass
class TrialLevel:
    n: int
    duplicate_rate: float
    hits: int
    trials: int


@dataclass
class SupportEstimate:
    final_n: int
    estimate: int
    lower_bound: bool
    trials: list
    pairs: list = field(default_factory=list)
    pair_samples: object = None

    def to_dict(self):
        return {
            "final_n": self.final_n,
            "estimate": self.estimate,
            "lower_bound": self.lower_bound,
            "trials": [{"n": t.n, "duplicate_rate": t.duplicate_rate} for t in self.trials],
            "pairs": [{"i": i, "j": j, "distance": d} for i, j, d in self.pairs],
        }


def _trial(sampler, embed, tau, n, top_k, rng):
    try:
        samples = np.asarray(sampler(n, rng))
    except Exception as exc:  # report any sampler failure uniformly
        raise DiversityError(f"sampler failed at N={n}: {exc}") from exc
    if len(samples) != n:
        raise DiversityError(f"sampler returned {len(samples)} samples, expected {n}")
    if n < 2:
        return False, [], samples
    pairs = top_k_pairs(embed(samples), min(top_k, n * (n - 1) // 2))
    dups = [p for p in pairs if duplicate_decision(p[2], tau)]
    return bool(dups), dups, samples


def duplicate_rate(sampler, embed, tau, n, trials, top_k=10, rng=None):
    """Fraction of ``trials`` batches of size n containing a duplicate pair."""
    rng = np.random.default_rng() if rng is None else rng
    hits = sum(_trial(sampler, embed, tau, n, top_k, rng)[0] for _ in range(trials))
    return hits / trials


def birthday_estimate(sampler, embed: EmbeddingSpec, tau, n0=16, trials=20, p_star=0.5, top_k=10,
                      n_cap=4096, rng=None) -> SupportEstimate:
    """Double N from ``n0`` until duplicates appear in at least ``p_star`` of trials.

    ``sampler(n, rng)`` returns n samples. Past ``n_cap`` the result is
    flagged as a lower bound rather than an estimate.
    """
    if n0 < 2:
        raise ValueError("initial batch must hold at least 2 samples")
    if trials < 1 or not 0 < p_star <= 1:
        raise ValueError("need trials >= 1 and p_star in (0, 1]")
    if not tau > 0:
        raise ValueError("threshold must be positive")
    if n0 > n_cap:
        raise ValueError("initial batch exceeds the cap")
    rng = np.random.default_rng() if rng is None else rng
    log = []
    n = n0
    while n <= n_cap:
        hits = 0
        found, found_samples = [], None
        for _ in range(trials):
            dup, pairs, samples = _trial(sampler, embed, tau, n, top_k, rng)
            if dup:
                hits += 1
                if not found:
                    found, found_samples = pairs, samples
        log.append(TrialLevel(n, hits / trials, hits, trials))
        if hits / trials >= p_star:
            return SupportEstimate(n, n * n, False, log, found, found_samples)
        n *= 2
    last = log[-1].n
    return SupportEstimate(last, last * last, True, log)


def write_report(estimate: SupportEstimate, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(estimate.to_dict(), indent=2) + "\n")
    return path


def dump_pairs(estimate: SupportEstimate, out_dir):
    """Write each duplicate pair as two PPM files for visual audit."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if estimate.pair_samples is None:
        return written
    samples = np.asarray(estimate.pair_samples)
    if samples.ndim != 4:
        return written
    for r, (i, j, _) in enumerate(estimate.pairs):
        for tag, idx in (("a", i), ("b", j)):
            p = out / f"pair_{r:02d}_{tag}.ppm"
            write_ppm(p, np.clip(samples[idx], 0, 1))
            written.append(p)
    return written


def uniform_item_sampler(items):
    """Sampler drawing uniformly with replacement from a fixed item array."""
    items = np.asarray(items)

    def sample(n, rng):
        return items[rng.integers(len(items), size=n)]

    return sample
