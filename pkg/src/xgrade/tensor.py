"""Dense-tensor core with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (fp32 by default, fp64 for the shadow evaluation
mode used by gradient checks) in row-major layout; images are NHWC. Every
differentiable op attaches an OpRecord carrying a backward closure, and
records are stamped with a global sequence number as they execute, so the
implicit graph is topologically ordered by construction. ``backward(loss)``
walks the records in exact reverse execution order.

Single-threaded execution is the correctness baseline: identical inputs
produce bitwise-identical forward and backward results.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ShapeError

_seq = itertools.count()

_grad_enabled = True


class no_grad:
    """Context manager that suspends graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class OpRecord:
    """Tape entry: op kind, input tensors, backward closure, sequence stamp.

    ``backward`` maps the gradient at the op's output to one gradient (or
    None) per input, aligned with ``inputs``. Saved intermediates live in
    the closure.
    """

    __slots__ = ("kind", "inputs", "backward", "seq")

    def __init__(self, kind: str, inputs: tuple["Tensor", ...],
                 backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.kind = kind
        self.inputs = inputs
        self.backward = backward
        self.seq = next(_seq)


class Tensor:
    """N-dimensional fp32/fp64 array with optional gradient and lineage."""

    __slots__ = ("data", "requires_grad", "grad", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op: Optional[OpRecord] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return (f"Tensor(shape={self.shape}, dtype={self.data.dtype}, "
                f"requires_grad={self.requires_grad})")


def make_result(data: np.ndarray, kind: str, inputs: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap an op result, recording lineage only while gradients are enabled."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = None
    out.requires_grad = False
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.op = OpRecord(kind, inputs, backward)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over broadcast dims so it matches ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _reachable(t: Tensor) -> list[Tensor]:
    """Non-leaf tensors reachable from ``t`` (each owns one op record)."""
    nodes: list[Tensor] = []
    seen: set[int] = set()
    stack = [t]
    while stack:
        node = stack.pop()
        if node.op is None or id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(node.op.inputs)
    return nodes


def collect_graph(t: Tensor) -> list[OpRecord]:
    """Op records reachable from ``t`` in forward (topological) order."""
    return [n.op for n in sorted(_reachable(t), key=lambda n: n.op.seq)]


def backward(loss: Tensor) -> None:
    """Fill ``grad`` for every tensor the scalar ``loss`` depends on.

    The gradient of the loss w.r.t. itself is 1. Gradients accumulate with
    out-of-place adds, so closures may safely return views.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward() requires a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for node in sorted(_reachable(loss), key=lambda n: n.op.seq, reverse=True):
        out_grad = node.grad
        if out_grad is None:
            continue
        grads = node.op.backward(out_grad)
        for inp, g in zip(node.op.inputs, grads):
            if g is None or not (inp.requires_grad or inp.op is not None):
                continue
            inp.grad = g if inp.grad is None else inp.grad + g
