"""Adam with decoupled weight decay, and a reduce-on-plateau learning-rate rule."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import ShapeError, Tensor


class AdamW:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, grads: Mapping[str, np.ndarray] | None = None) -> None:
        """One update; ``grads`` defaults to each parameter's ``.grad`` (None counts as zero)."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k] if grads is not None else p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient for {k} has shape {g.shape}, parameter has {p.data.shape}")
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data = p.data - self.lr * self.weight_decay * p.data - self.lr * update


def adamw_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], opt: AdamW, lr: float | None = None) -> None:
    if lr is not None:
        opt.lr = lr
    opt.step(grads)


class PlateauSchedule:
    """Halve the learning rate once validation loss has not improved for ``patience`` epochs."""

    def __init__(self, lr: float, patience: int = 5, factor: float = 0.5):
        if patience < 1:
            raise ValueError("patience must be at least 1")
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = float("inf")
        self.bad_epochs = 0

    def observe(self, val_loss: float) -> float:
        """Record an epoch's validation loss; returns the learning rate for the next epoch."""
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr
