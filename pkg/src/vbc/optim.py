"""Adam with decoupled weight decay, and the stepped exponential LR schedule."""

from __future__ import annotations

import numpy as np

from .engine.tensor import Parameter


class AdamW:
    """w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * w, with the decay
    term taken from the pre-update weights; gradients are zeroed after each
    step."""

    def __init__(
        self,
        params: list[Parameter],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-7,
        weight_decay: float = 1e-4,
    ):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float):
        for p in self.params:
            if p.grad is None:
                raise RuntimeError(f"optimizer step with empty gradient for {p.name}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = lr * ((m / bc1) / (np.sqrt(v / bc2) + self.eps))
            if self.weight_decay:
                update = update + (lr * self.weight_decay) * p.data
            p.data = p.data - update
            p.zero_grad()


def lr_at_epoch(
    epoch: int,
    initial: float = 1e-4,
    factor: float = 0.95,
    interval: int = 50,
) -> float:
    """Learning rate multiplied by `factor` once per `interval` epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return initial * factor ** (epoch // interval)
