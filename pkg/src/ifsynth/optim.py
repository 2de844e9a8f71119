import math

import numpy as np

from .tensor import ContractError


def cosine_lr(base_lr, epoch, total_epochs):
    """Cosine annealing from ``base_lr`` at epoch 0 to 0 at ``total_epochs``."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place. Gradients are left untouched."""
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name!r} has no gradient")
    for p in params:
        g = p.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (g * g)
        mhat = p.adam_m / (1.0 - beta1 ** t)
        vhat = p.adam_v / (1.0 - beta2 ** t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)


class Adam:
    """Holds hyperparameters for a fixed parameter list; state lives on the parameters."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr=None):
        """Update every parameter; those without a gradient count as zero-gradient."""
        for p in self.params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        adam_step(self.params, self.lr if lr is None else lr, self.beta1, self.beta2, self.eps)
