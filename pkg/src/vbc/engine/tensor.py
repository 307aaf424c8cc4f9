"""Reverse-mode differentiation over dense arrays.

There is no general autograd here: every supported operation registers one
graph node with a hand-written backward closure, and `backward()` replays the
closures in reverse topological order of the forward pass.  Training runs in
float32; float64 exists for finite-difference verification only.
"""

from __future__ import annotations

import contextlib

import numpy as np


class NonFiniteError(ArithmeticError):
    """An operation produced NaN/Inf while debug checks were active."""


_GRAD_ENABLED = True
_DEBUG_CHECKS = False


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def debug_checks():
    """Check every op output for NaN/Inf (slow; tests only)."""
    global _DEBUG_CHECKS
    prev = _DEBUG_CHECKS
    _DEBUG_CHECKS = True
    try:
        yield
    finally:
        _DEBUG_CHECKS = prev


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


class Tensor:
    """Array plus (optionally) a gradient accumulator and a graph node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Backpropagate from this node; gradients accumulate additively."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        if seed is None:
            seed = np.ones_like(self.data)
        self.accumulate_grad(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


class Parameter(Tensor):
    """Named trainable tensor; gradient zeroed by the optimizer between steps."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(np.asarray(data), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def graph_node(data: np.ndarray, parents, backward_fn) -> Tensor:
    """Register one forward result; `backward_fn(grad)` must push gradients
    into each parent via `accumulate_grad`."""
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError("operation produced non-finite values")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out
