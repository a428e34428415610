"""Finite-difference gradient checking with fp64 shadow evaluation.

fp32 rounding drowns central differences at h=1e-5, so checks are run on
float64 tensors; production code stays fp32. ``f`` must rebuild its forward
pass from the given leaf tensors on every call (re-seeding any RNG it uses),
so the same mask / batch statistics are seen by every evaluation.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def numeric_gradient(f: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. every element of t."""
    grad = np.zeros_like(t.data)
    flat = t.data.ravel()
    gflat = grad.ravel()
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(f: Callable[[], Tensor], leaves: Sequence[Tensor],
                       h: float = 1e-5) -> float:
    """Worst analytic-vs-numeric gradient mismatch over the given leaves.

    Per leaf the error is max|a - n| scaled by the leaf's gradient magnitude
    (absolute when the true gradient is essentially zero).
    """
    for t in leaves:
        t.grad = None
    backward(f())
    worst = 0.0
    for t in leaves:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_gradient(f, t, h)
        scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0))
        diff = np.abs(analytic - numeric).max(initial=0.0)
        worst = max(worst, diff if scale < 1e-8 else diff / scale)
    return worst


def random_leaf(rng: np.random.Generator, shape: tuple[int, ...],
                scale: float = 1.0) -> Tensor:
    """fp64 leaf tensor with standard-normal entries, for gradient checks."""
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)
