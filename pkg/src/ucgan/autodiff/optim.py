"""Adam with an exponentially decayed learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor, check_finite


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_rate: float = 0.96
    decay_steps: int = 1000
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def learning_rate(self, step=None):
        step = self.step if step is None else step
        return self.lr * self.decay_rate ** (step / self.decay_steps)


def adam_step(state: AdamState, params, grads):
    """Apply one bias-corrected Adam update in place.

    ``params`` are Tensors, ``grads`` are arrays of matching shapes. The
    moments are allocated lazily on the first call.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("parameter list changed between Adam steps")
    for p, g, m in zip(params, grads, state.m):
        if np.shape(g) != p.shape or m.shape != p.shape:
            raise ShapeError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
        check_finite(g, "gradient")

    lr = state.learning_rate()
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=p.data.dtype)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)
    return params, state


class Adam:
    """Thin owner of a parameter list and its AdamState."""

    def __init__(self, params, **settings):
        self.params: list[Tensor] = list(params)
        self.state = AdamState(**settings)

    def step(self, grads):
        adam_step(self.state, self.params, grads)

    def step_from_leaves(self):
        self.step([p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params])
