"""Central finite-difference gradient verification in float64."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, grad, precision


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int
    tol: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tol


def relative_error(analytic, numeric, floor=1e-8):
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)


def check_gradients(fn, tensors, *, h=1e-5, tol=1e-4, max_coords=None, rng=None, name="fn"):
    """Compare analytic gradients of ``fn`` with central differences.

    ``fn`` maps no arguments to an output Tensor built from ``tensors``
    (which must be float64 leaves with requires_grad). Non-scalar outputs
    are contracted with a fixed random weighting. With ``max_coords`` only a
    random subset of coordinates per tensor is perturbed.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    with precision(np.float64):
        out = fn()
        weights = None
        if out.data.size != 1:
            weights = rng.standard_normal(out.shape)

        def scalar():
            o = fn()
            return (o * Tensor(weights)).sum() if weights is not None else o.sum()

        def value():
            o = fn().data
            return float(np.sum(o * weights)) if weights is not None else float(np.sum(o))

        analytic = grad(scalar(), tensors)
        worst = 0.0
        checked = 0
        for t, ga in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            num = np.empty(len(idx))
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                fp = value()
                flat[i] = orig - h
                fm = value()
                flat[i] = orig
                num[k] = (fp - fm) / (2 * h)
            worst = max(worst, relative_error(ga.reshape(-1)[idx], num))
            checked += len(idx)
    return GradCheckResult(name, worst, checked, tol)
