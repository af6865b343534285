"""Reverse-mode differentiation over numpy arrays.

Operations accept either :class:`Variable` nodes or plain arrays. When no
operand is a Variable the plain numpy result is returned, so the same code
path serves both evaluation and differentiation.
"""
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union["Variable", np.ndarray, float]


class Variable:
    __slots__ = "value", "grad", "_parents"
    # Make numpy defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, parents: Tuple = ()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return Variable(-self.value, ((self, lambda g: -g),))

    def __pow__(self, exponent: float):
        if isinstance(exponent, Variable):
            raise TypeError("Only constant exponents are supported.")
        a = self.value
        return Variable(
            a ** exponent,
            ((self, lambda g: g * exponent * a ** (exponent - 1)),)
        )

    def __getitem__(self, index):
        shape = self.value.shape

        def vjp(g):
            # Basic indexing only: every element is selected at most once
            full = np.zeros(shape)
            full[index] += g
            return full
        return Variable(self.value[index], ((self, vjp),))

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``grad`` of every leaf."""
        order = _topological_order(self)
        pending = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, vjp in node._parents:
                contribution = vjp(g)
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + contribution
                else:
                    pending[key] = contribution

    def __repr__(self) -> str:
        return f"Variable(shape={self.value.shape})"


def value_of(x: ArrayLike) -> np.ndarray:
    return x.value if isinstance(x, Variable) else np.asarray(x)


def _topological_order(root: Variable) -> List[Variable]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b, fn: Callable, da: Callable, db: Callable):
    av, bv = value_of(a), value_of(b)
    out = fn(av, bv)
    parents = []
    if isinstance(a, Variable):
        parents.append(
            (a, lambda g: _unbroadcast(da(g, av, bv), av.shape))
        )
    if isinstance(b, Variable):
        parents.append(
            (b, lambda g: _unbroadcast(db(g, av, bv), bv.shape))
        )
    if not parents:
        return out
    return Variable(out, tuple(parents))


def add(a: ArrayLike, b: ArrayLike):
    return _binary(a, b, np.add,
                   lambda g, a, b: g,
                   lambda g, a, b: g)


def subtract(a: ArrayLike, b: ArrayLike):
    return _binary(a, b, np.subtract,
                   lambda g, a, b: g,
                   lambda g, a, b: -g)


def multiply(a: ArrayLike, b: ArrayLike):
    return _binary(a, b, np.multiply,
                   lambda g, a, b: g * b,
                   lambda g, a, b: g * a)


def divide(a: ArrayLike, b: ArrayLike):
    return _binary(a, b, np.divide,
                   lambda g, a, b: g / b,
                   lambda g, a, b: -g * a / (b * b))


def tanh(a: ArrayLike):
    if not isinstance(a, Variable):
        return np.tanh(a)
    out = np.tanh(a.value)
    return Variable(out, ((a, lambda g: g * (1.0 - out * out)),))


def reshape(a: ArrayLike, shape: tuple):
    if not isinstance(a, Variable):
        return np.reshape(a, shape)
    original = a.value.shape
    return Variable(a.value.reshape(shape),
                    ((a, lambda g: g.reshape(original)),))


def expand_trailing(a: ArrayLike, count: int):
    """Append ``count`` singleton axes."""
    return reshape(a, value_of(a).shape + (1,) * count)


def sum(a: ArrayLike, axis=None):  # noqa: A001
    if not isinstance(a, Variable):
        return np.sum(a, axis=axis)
    shape = a.value.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()
    return Variable(np.sum(a.value, axis=axis), ((a, vjp),))


def mean(a: ArrayLike, axis=None):
    count = value_of(a).size if axis is None else value_of(a).shape[axis]
    return sum(a, axis=axis) / float(count)


def einsum(subscripts: str, *operands: ArrayLike):
    """Einstein summation with reverse-mode support.

    Operand subscripts may not repeat a letter (no diagonal extraction).
    """
    values = [value_of(op) for op in operands]
    out = np.einsum(subscripts, *values, optimize=True)
    if not any(isinstance(op, Variable) for op in operands):
        return out

    inputs, output = subscripts.replace(" ", "").split("->")
    in_subs = inputs.split(",")
    for subs in in_subs:
        if len(set(subs)) != len(subs):
            raise ValueError(f"Repeated index in '{subs}' is unsupported.")

    def make_vjp(k: int):
        target = in_subs[k]
        others = [s for j, s in enumerate(in_subs) if j != k]
        other_values = [v for j, v in enumerate(values) if j != k]
        available = set(output).union(*others)
        kept = "".join(c for c in target if c in available)
        expr = ",".join([output] + others) + "->" + kept

        def vjp(g):
            grad = np.einsum(expr, g, *other_values, optimize=True)
            if kept != target:
                for axis, c in enumerate(target):
                    if c not in available:
                        grad = np.expand_dims(grad, axis)
                grad = np.broadcast_to(grad, values[k].shape).copy()
            return grad
        return vjp

    parents = tuple(
        (op, make_vjp(k)) for k, op in enumerate(operands)
        if isinstance(op, Variable)
    )
    return Variable(out, parents)


def leaves(arrays: Sequence[np.ndarray]) -> List[Variable]:
    return [Variable(np.array(a, dtype=np.float64)) for a in arrays]


def first_non_finite(root: Variable) -> Optional[Variable]:
    """Earliest batched node below ``root`` holding a non-finite entry."""
    for node in _topological_order(root):
        if node.value.ndim and not np.isfinite(node.value).all():
            return node
    return None
