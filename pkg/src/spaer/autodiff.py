"""Minimal reverse-mode gradient engine over numpy arrays.

Supports exactly the operations the attention refiner and its training loss
need: broadcast add/mul, matmul (incl. batched), softmax, relu, reshape,
transpose, and reductions. Float64 throughout; evaluation order is fixed, so
gradients are bitwise reproducible.
"""
from __future__ import annotations

import numpy as np

from .errors import NonFiniteGradient


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape` to undo numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, data, parents=(), backward=None, requires_grad=True):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _ensure(other)
        out = Tensor(self.data + other.data, (self, other))
        def backward(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))
        out._backward = backward
        return out

    def __sub__(self, other):
        other = _ensure(other)
        out = Tensor(self.data - other.data, (self, other))
        def backward(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape))
        out._backward = backward
        return out

    def __mul__(self, other):
        other = _ensure(other)
        out = Tensor(self.data * other.data, (self, other))
        def backward(g):
            return (_unbroadcast(g * other.data, self.shape),
                    _unbroadcast(g * self.data, other.shape))
        out._backward = backward
        return out

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        out._backward = lambda g: (-g,)
        return out

    def __matmul__(self, other):
        other = _ensure(other)
        out = Tensor(self.data @ other.data, (self, other))
        def backward(g):
            ga = g @ np.swapaxes(other.data, -1, -2)
            gb = np.swapaxes(self.data, -1, -2) @ g
            return (_unbroadcast(ga, self.shape), _unbroadcast(gb, other.shape))
        out._backward = backward
        return out

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))
        out._backward = lambda g: (g.reshape(self.shape),)
        return out

    def transpose(self, *axes):
        inv = np.argsort(axes)
        out = Tensor(self.data.transpose(*axes), (self,))
        out._backward = lambda g: (g.transpose(*inv),)
        return out

    # -- nonlinearities and reductions --------------------------------------

    def relu(self):
        mask = self.data > 0
        out = Tensor(self.data * mask, (self,))
        out._backward = lambda g: (g * mask,)
        return out

    def softmax(self):
        """Softmax over the last axis."""
        shifted = self.data - self.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=-1, keepdims=True)
        out = Tensor(y, (self,))
        def backward(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            return (y * (g - dot),)
        out._backward = backward
        return out

    def sum(self):
        out = Tensor(self.data.sum(), (self,))
        out._backward = lambda g: (g * np.ones_like(self.data),)
        return out

    def square(self):
        out = Tensor(self.data * self.data, (self,))
        out._backward = lambda g: (2.0 * g * self.data,)
        return out

    # -- backprop -----------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        def visit(node: Tensor):
            if id(node) in seen:
                return
            seen.add(id(node))
            for parent in node._parents:
                visit(parent)
            order.append(node)
        visit(self)

        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                parent.grad = parent.grad + g
        for node in order:
            if node.requires_grad and not np.all(np.isfinite(node.grad)):
                raise NonFiniteGradient("NaN/Inf in backward pass")


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=False)
