"""Dense feed-forward trunk with hand-written forward/backward passes.

Arrays are float64 and row-major: one sample per row. Hidden layers use a
rectifier; the last layer is affine only, so its output (the penultimate
representation fed to the task heads) can take any sign.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, StateError


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    cached_input: np.ndarray | None = field(default=None, repr=False)
    cached_preactivation: np.ndarray | None = field(default=None, repr=False)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Network:
    layers: list[DenseLayer]

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def feature_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def copy(self) -> "Network":
        return Network([DenseLayer(l.weight.copy(), l.bias.copy()) for l in self.layers])


@dataclass
class Gradients:
    """Parameter gradients for the trunk and any number of task heads.

    ``layers`` holds one ``(dW, db)`` pair per trunk layer; ``heads`` maps a
    task index to the ``(dW, db)`` pair of that head.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    heads: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, net: Network) -> "Gradients":
        return cls([(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers])

    def __add__(self, other: "Gradients") -> "Gradients":
        if len(self.layers) != len(other.layers):
            raise ShapeError("gradient layer counts differ")
        layers = []
        for (w1, b1), (w2, b2) in zip(self.layers, other.layers):
            if w1.shape != w2.shape or b1.shape != b2.shape:
                raise ShapeError("gradient shapes differ")
            layers.append((w1 + w2, b1 + b2))
        heads = dict(self.heads)
        for k, (w2, b2) in other.heads.items():
            if k in heads:
                w1, b1 = heads[k]
                if w1.shape != w2.shape or b1.shape != b2.shape:
                    raise ShapeError(f"head {k} gradient shapes differ")
                heads[k] = (w1 + w2, b1 + b2)
            else:
                heads[k] = (w2, b2)
        return Gradients(layers, heads)

    def all_finite(self) -> bool:
        arrays = [a for pair in self.layers for a in pair]
        arrays += [a for pair in self.heads.values() for a in pair]
        return all(np.all(np.isfinite(a)) for a in arrays)


def init_network(layer_sizes: list[int], seed: int) -> Network:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise ConfigError(f"need at least 2 layer sizes, got {sizes}")
    if any(int(s) != s or s <= 0 for s in sizes):
        raise ConfigError(f"layer sizes must be positive integers, got {sizes}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = glorot_bound(fan_in, fan_out)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(DenseLayer(w, np.zeros(fan_out)))
    return Network(layers)


def forward(net: Network, batch: np.ndarray, cache: bool = True) -> np.ndarray:
    """Trunk features for ``batch`` of shape (n, input_dim).

    With ``cache=False`` nothing is written to the layers, so evaluation can
    run on a frozen network without disturbing a pending backward pass.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"expected batch of shape (n, {net.input_dim}), got {x.shape}")
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        z = x @ layer.weight.T + layer.bias
        if cache:
            layer.cached_input = x
            layer.cached_preactivation = z
        x = z if i == last else np.maximum(z, 0.0)
    return x


def backward(net: Network, grad_wrt_features: np.ndarray) -> Gradients:
    """Reverse pass through the trunk; consumes the caches left by ``forward``."""
    if any(layer.cached_input is None for layer in net.layers):
        raise StateError("backward called without a preceding forward")
    g = np.asarray(grad_wrt_features, dtype=np.float64)
    n = net.layers[0].cached_input.shape[0]
    if g.shape != (n, net.feature_dim):
        raise ShapeError(f"expected feature gradient of shape {(n, net.feature_dim)}, got {g.shape}")
    grads = [None] * len(net.layers)
    last = len(net.layers) - 1
    for i in range(last, -1, -1):
        layer = net.layers[i]
        if i != last:
            g = g * (layer.cached_preactivation > 0)
        grads[i] = (g.T @ layer.cached_input, g.sum(axis=0))
        if i > 0:
            g = g @ layer.weight
        layer.cached_input = None
        layer.cached_preactivation = None
    return Gradients(grads)


def sgd_step(net: Network, grads: Gradients, lr: float, heads=None) -> None:
    """In-place ``p <- p - lr * g`` on the trunk and, if given, the task heads.

    ``heads`` is a sequence of objects with ``weight``/``bias`` arrays indexed
    by task; only heads present in ``grads.heads`` are touched.
    """
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if len(grads.layers) != len(net.layers):
        raise ShapeError("gradient layer count does not match network")
    for layer, (dw, db) in zip(net.layers, grads.layers):
        if dw.shape != layer.weight.shape or db.shape != layer.bias.shape:
            raise ShapeError("gradient shape does not match layer")
    if grads.heads and heads is None:
        raise ShapeError("head gradients given but no heads to update")
    for k, (dw, db) in grads.heads.items():
        if k >= len(heads) or dw.shape != heads[k].weight.shape or db.shape != heads[k].bias.shape:
            raise ShapeError(f"head {k} gradient does not match head")
    for layer, (dw, db) in zip(net.layers, grads.layers):
        layer.weight -= lr * dw
        layer.bias -= lr * db
    for k, (dw, db) in grads.heads.items():
        heads[k].weight -= lr * dw
        heads[k].bias -= lr * db
