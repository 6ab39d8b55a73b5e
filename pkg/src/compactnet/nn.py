"""Fully connected networks on top of the autodiff engine."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOSSES = ("mse", "cross-entropy", "binary-cross-entropy")


@dataclass
class Dense:
    W: Tensor
    b: Tensor | None = None
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {sorted(ad.ACTIVATIONS)}")
        if self.W.ndim != 2:
            raise ValueError("Dense weight must be a 2-D (in, out) matrix")
        if self.b is not None and self.b.shape != (self.W.shape[1],):
            raise ValueError(f"bias shape {self.b.shape} does not match weight {self.W.shape}")

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]


class DenseNet:
    """A stack of dense layers with a loss tag.

    ``forward`` accepts optional replacement weights so that masked, noisy or
    quantized views of the parameters flow through the same code path.
    """

    def __init__(self, layers: Sequence[Dense], loss: str = "mse"):
        if loss not in LOSSES:
            raise ValueError(f"unknown loss {loss!r}; choose from {LOSSES}")
        layers = list(layers)
        for i in range(1, len(layers)):
            if layers[i - 1].n_out != layers[i].n_in:
                raise ValueError(
                    f"layer {i} expects {layers[i].n_in} inputs but layer {i - 1} produces {layers[i - 1].n_out}")
        self.layers = layers
        self.loss_kind = loss

    @classmethod
    def build(cls, sizes: Sequence[int], activations: Sequence[str] | str = "relu",
              loss: str = "mse", bias: bool = True, seed: int | np.random.Generator = 0,
              output_activation: str = "identity") -> "DenseNet":
        """He-style initialisation; ``activations`` applies to hidden layers."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        n = len(sizes) - 1
        if n < 1:
            raise ValueError("need at least an input and an output size")
        if isinstance(activations, str):
            acts = [activations] * (n - 1) + [output_activation]
        else:
            acts = list(activations)
            if len(acts) != n:
                raise ValueError(f"{n} layers but {len(acts)} activations")
        layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            W = Tensor(rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)), requires_grad=True, name=f"W{i}")
            B = Tensor(np.zeros(b), requires_grad=True, name=f"b{i}") if bias else None
            layers.append(Dense(W, B, acts[i]))
        return cls(layers, loss)

    # parameter views

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.append(layer.W)
            if layer.b is not None:
                out.append(layer.b)
        return out

    def weights(self) -> list[Tensor]:
        """Maskable parameters: layer weight matrices only."""
        return [layer.W for layer in self.layers]

    def biases(self) -> list[Tensor | None]:
        return [layer.b for layer in self.layers]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    @property
    def n_weights(self) -> int:
        return sum(w.size for w in self.weights())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()]) if self.layers else np.zeros(0)

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {flat.size}")
        i = 0
        for p in self.parameters():
            p.data = flat[i:i + p.size].reshape(p.shape).copy()
            i += p.size

    def clone(self) -> "DenseNet":
        return copy.deepcopy(self)

    # computation

    def forward(self, x, weights: Sequence | None = None,
                act_hook: Callable[[int, Tensor], Tensor] | None = None) -> Tensor:
        """Run the network on a batch ``x`` of shape (n, n_in).

        ``weights`` optionally replaces each layer's W (any Tensor or array of
        the same shape).  ``act_hook(i, u)`` post-processes the activation of
        hidden layer ``i``.
        """
        h = ad.as_tensor(x)
        if h.ndim == 1:
            h = ad.reshape(h, (1, h.shape[0]))
        if weights is not None and len(weights) != len(self.layers):
            raise ValueError(f"got {len(weights)} weight overrides for {len(self.layers)} layers")
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            W = layer.W if weights is None else ad.as_tensor(weights[i])
            if W.shape != layer.W.shape:
                raise ValueError(f"layer {i}: override weight shape {W.shape} != {layer.W.shape}")
            if h.ndim != 2 or h.shape[1] != W.shape[0]:
                raise ValueError(f"layer {i}: input has shape {h.shape}, expected (batch, {W.shape[0]})")
            z = ad.matmul(h, W)
            if layer.b is not None:
                z = ad.add_bias(z, layer.b)
            h = ad.ACTIVATIONS[layer.activation](z)
            if act_hook is not None and i < last:
                h = act_hook(i, h)
        return h

    def loss(self, x, y, weights: Sequence | None = None,
             act_hook: Callable[[int, Tensor], Tensor] | None = None) -> Tensor:
        return loss_fn(self.loss_kind, self.forward(x, weights, act_hook), y)

    def predict(self, x, weights: Sequence | None = None) -> np.ndarray:
        return self.forward(x, weights).data

    def accuracy(self, x, y, weights: Sequence | None = None) -> float:
        return accuracy(self.loss_kind, self.predict(x, weights), y)


def loss_fn(kind: str, out: Tensor, y) -> Tensor:
    if kind == "mse":
        return ad.mse(out, y)
    if kind == "cross-entropy":
        return ad.cross_entropy(out, y)
    if kind == "binary-cross-entropy":
        return ad.bce_with_logits(out, y)
    raise ValueError(f"unknown loss {kind!r}")


def accuracy(kind: str, out: np.ndarray, y) -> float:
    y = np.asarray(y)
    if kind == "cross-entropy":
        return float(np.mean(out.argmax(axis=1) == y))
    if kind == "binary-cross-entropy":
        return float(np.mean((out.reshape(y.shape) > 0) == (y > 0.5)))
    raise ValueError("accuracy is undefined for regression losses")
