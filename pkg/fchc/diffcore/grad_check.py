from typing import Callable

import numpy as np

from fchc.diffcore.tensor import Tape, Tensor


def numeric_grad(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar f at x, one coordinate at a time."""
    base = x.data.copy()
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        shifted = base.copy().reshape(-1)
        shifted[i] += step
        up = f(Tensor(shifted.reshape(base.shape))).item()
        shifted[i] -= 2.0 * step
        down = f(Tensor(shifted.reshape(base.shape))).item()
        flat[i] = (up - down) / (2.0 * step)
    return grad


def analytic_grad(f: Callable[[Tensor], Tensor], x: Tensor) -> np.ndarray:
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(probe)
    tape.backward(out)
    return np.zeros_like(probe.data) if probe.grad is None else probe.grad


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5, atol: float = 1e-3) -> float:
    """
    Max relative error between the tape gradient of a scalar f at x and central
    differences. Entries whose magnitudes are both below `atol` are compared
    against `atol` instead, so near-zero gradients do not dominate.
    """
    a = analytic_grad(f, x)
    n = numeric_grad(f, x, step)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), atol)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
