"""Dense tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever one
of their inputs requires gradients.  A backward sweep over the tape yields a
map from leaf tensors (parameters) to gradient arrays::

    w = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = (w * w).sum() * 0.5
    grads = backward(tape)
    grads[w]  # == w.data

Broadcasting is deliberately restricted: elementwise binary ops need equal
shapes (or a Python scalar operand); bias addition goes through ``add_bias``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

_state = threading.local()


def _tape_stack() -> list:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


class Tensor:
    """An n-dimensional float64 array that may take part in differentiation."""

    __array_priority__ = 1000  # keep numpy from hijacking reflected operators

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._node: Node | None = None

    # array-ish helpers

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


@dataclass
class Node:
    out: Tensor
    parents: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Append-only record of primitive operations, in topological order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], vjp) -> None:
        node = Node(out, parents, vjp)
        out._node = node
        out.requires_grad = True
        self.nodes.append(node)


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, parents, vjp)
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim > 0 and b.ndim > 0:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (use add_bias or reshape)")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # only scalar (0-d) operands are ever broadcast
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "div")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** exponent
    return _make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


# activations

def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function evaluated with separate branches for each sign."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = stable_sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def softplus(a) -> Tensor:
    """log(1 + e^x), overflow-free."""
    a = as_tensor(a)
    return _make(np.logaddexp(0.0, a.data), (a,), lambda g: (g * stable_sigmoid(a.data),))


def erf(a) -> Tensor:
    a = as_tensor(a)
    return _make(special.erf(a.data), (a,),
                 lambda g: (g * 2.0 / np.sqrt(np.pi) * np.exp(-a.data ** 2),))


def arctan(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.arctan(a.data), (a,), lambda g: (g / (1.0 + a.data ** 2),))


def identity(a) -> Tensor:
    return as_tensor(a)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "identity": identity,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


# linear algebra and shape ops

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def add_bias(x, b) -> Tensor:
    """x of shape (n, k) plus bias of shape (k,), broadcast over rows."""
    x, b = as_tensor(x), as_tensor(b)
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise ValueError(f"add_bias: bias {b.shape} does not match input {x.shape}")
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), vjp)


def take(a, index: np.ndarray) -> Tensor:
    """Gather a[index] for an integer index array; gradients scatter-add back."""
    return getitem(a, np.asarray(index))


def stack(tensors: Sequence[Tensor]) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    return _make(np.stack([t.data for t in ts]), tuple(ts), lambda g: tuple(g[i] for i in range(len(ts))))


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.full(a.shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(out, (a,), vjp)


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    return _make(a.data.mean(), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def stop_gradient(a) -> Tensor:
    return Tensor(as_tensor(a).data)


def straight_through(x, forward_value: np.ndarray) -> Tensor:
    """Forward as ``forward_value``, backward as identity w.r.t. ``x``."""
    x = as_tensor(x)
    fv = np.asarray(forward_value, dtype=np.float64)
    if fv.shape != x.shape:
        raise ValueError("straight_through: value shape differs from input")
    return _make(fv.copy(), (x,), lambda g: (g,))


# losses

def log_softmax(z) -> Tensor:
    z = as_tensor(z)
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (z,), lambda g: (g - soft * g.sum(axis=1, keepdims=True),))


def cross_entropy(logits, labels: np.ndarray) -> Tensor:
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    lp = log_softmax(logits)
    picked = getitem(lp, (np.arange(n), labels))
    return neg(mean(picked))


def bce_with_logits(logits, targets: np.ndarray) -> Tensor:
    z = as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64).reshape(z.shape)
    # max(z,0) - z t + log(1 + e^{-|z|})
    vals = np.maximum(z.data, 0) - z.data * t + np.log1p(np.exp(-np.abs(z.data)))
    n = z.size
    return _make(np.asarray(vals.mean()), (z,), lambda g: (float(g) * (stable_sigmoid(z.data) - t) / n,))


def mse(pred, targets: np.ndarray) -> Tensor:
    pred = as_tensor(pred)
    diff = pred - Tensor(np.asarray(targets, dtype=np.float64).reshape(pred.shape))
    return mean(square(diff))


# backward sweep

def backward(tape: Tape, seed=None, output: Tensor | None = None) -> dict[Tensor, np.ndarray]:
    """Propagate adjoints through ``tape``; return gradients of leaf tensors.

    ``output`` defaults to the last recorded node.  ``seed`` defaults to ones
    (for a scalar output, the usual dL/dL = 1).
    """
    if not tape.nodes:
        raise ValueError("backward called on an empty tape")
    if output is None:
        output = tape.nodes[-1].out
    seed = np.ones(output.shape) if seed is None else np.asarray(
        seed.data if isinstance(seed, Tensor) else seed, dtype=np.float64)
    if seed.shape != output.shape:
        raise ValueError(f"seed shape {seed.shape} does not match output shape {output.shape}")

    adj: dict[int, np.ndarray] = {id(output): seed}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = adj.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            adj[key] = adj[key] + pg if key in adj else pg
            if parent._node is None:
                leaves[key] = parent
    return {t: adj[k] for k, t in leaves.items() if k in adj}


def value_and_grad(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> tuple[float, list[np.ndarray]]:
    """Evaluate a scalar loss closure and its gradient w.r.t. ``params``.

    Parameters the loss does not depend on get zero gradients.
    """
    with Tape() as tape:
        loss = fn()
    if not tape.nodes:
        return float(loss.data), [np.zeros(p.shape) for p in params]
    grads = backward(tape, output=loss)
    return float(loss.data), [grads.get(p, np.zeros(p.shape)) for p in params]
