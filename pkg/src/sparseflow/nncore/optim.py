from __future__ import annotations

import numpy as np

from .params import ParamStore


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update over every parameter, then zero the gradients.

    All gradients are checked before any value changes, so a failing step
    leaves the store untouched.
    """
    for name, p in store.items():
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(name)
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for _, p in store.items():
        g = p.grad
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * g * g
        p.value -= (lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)).astype(p.value.dtype, copy=False)
        g.fill(0)
