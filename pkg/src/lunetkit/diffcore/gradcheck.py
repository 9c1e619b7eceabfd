"""Finite-difference verification of the analytic adjoints."""

from __future__ import annotations

import numpy as np

from ..errors import NotScalarLoss
from .tensor import Tape, Tensor, backward


def check_gradients(fn, inputs, eps: float = 1e-6) -> float:
    """Max relative error between backward() and central differences.

    fn must map the given Tensors to a scalar Tensor. Every element of every
    input is perturbed by +/- eps, so keep inputs small. Returns
    max |g_ad - g_fd| / max(1, |g_fd|) over all elements.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    inputs = list(inputs)
    for t in inputs:
        t.zero_grad()
    with Tape() as tape:
        out = fn(*inputs)
        if out.size != 1:
            raise NotScalarLoss(f"fn must be scalar-valued, got shape {out.shape}")
        backward(tape, out)

    worst = 0.0
    for t in inputs:
        g_ad = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn(*inputs).item()
            flat[i] = orig - eps
            f_minus = fn(*inputs).item()
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * eps)
            err = abs(g_ad.reshape(-1)[i] - g_fd) / max(1.0, abs(g_fd))
            worst = max(worst, err)
    return worst
