"""Tensors, the recording tape and reverse-mode gradient replay.

Values are float64 numpy arrays. Operations only record onto a tape while one
is active (``with Tape() as tape: ...``) and at least one input requires a
gradient, so inference code pays nothing for the machinery.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("value", "requires_grad", "name")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to the reflected Tensor op

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar, all routed through recorded ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other: float):
        return mul(self, 1.0 / float(other))

    def __getitem__(self, index):
        return take(self, index)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    visits: int = 0

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        self.nodes.append(Node(out, inputs, backward))

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def record(value: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap ``value`` as the output of a primitive and log it if needed."""
    out = Tensor(value)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Gradients(dict):
    """Mapping from parameter tensors to gradient arrays (keyed by identity)."""

    def of(self, tensors: Iterable[Tensor]) -> list[np.ndarray]:
        return [self[t] for t in tensors]


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> Gradients:
    """Reverse-mode sweep over ``tape`` from the scalar ``loss``.

    Returns gradients for every leaf tensor that requires grad and was reached,
    plus exact zeros for any tensor in ``params`` the loss does not depend on.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    produced = {id(node.out) for node in tape.nodes}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        tape.visits += 1
        g = adjoint.pop(id(node.out), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key not in produced:
                leaves[key] = t
            if key in adjoint:
                adjoint[key] = adjoint[key] + gi
            else:
                adjoint[key] = gi
    grads = Gradients()
    for key, t in leaves.items():
        grads[t] = adjoint[key]
    if id(loss) not in produced and loss.requires_grad:
        grads[loss] = np.ones_like(loss.value)
    for p in params or ():
        if p not in grads:
            grads[p] = np.zeros_like(p.value)
    return grads


# ---------------------------------------------------------------- primitives

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(
        a.value + b.value,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(
        a.value - b.value,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(
        a.value * b.value,
        (a, b),
        lambda g: (unbroadcast(g * b.value, a.shape), unbroadcast(g * a.value, b.shape)),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = g @ b.value.T if b.value.ndim == 2 else np.outer(g, b.value)
        if a.value.ndim == 1:
            gb = np.outer(a.value, g)
        else:
            gb = a.value.T @ g
        return ga, gb

    return record(a.value @ b.value, (a, b), back)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)
    return record(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.value)
    return record(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return record(a.value * mask, (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.value)
    return record(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return record(np.log(a.value), (a,), lambda g: (g / a.value,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    y = np.logaddexp(0.0, a.value)
    return record(y, (a,), lambda g: (g * _sigmoid(a.value),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return record(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.value <= b.value
    return record(
        np.where(pick_a, a.value, b.value),
        (a, b),
        lambda g: (unbroadcast(g * pick_a, a.shape), unbroadcast(g * ~pick_a, b.shape)),
    )


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return record(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return record(np.sum(a.value, axis=axis), (a,), back)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return record(
        np.concatenate([p.value for p in parts], axis=axis),
        parts,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def take(a, index) -> Tensor:
    a = as_tensor(a)

    def back(g):
        out = np.zeros_like(a.value)
        np.add.at(out, index, g)
        return (out,)

    return record(a.value[index], (a,), back)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    return record(
        np.stack([p.value for p in parts], axis=axis),
        parts,
        lambda g: tuple(np.moveaxis(g, axis, 0)),
    )
