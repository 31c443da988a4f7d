"""Small feed-forward networks with hand-written reverse passes.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``grads`` during ``backward``. A layer
is used once per forward pass; call ``zero_grad`` before a new backward.
"""

from __future__ import annotations

import math

import numpy as np

from boltzrelax.config import NetworkConfig


class Layer:
    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for name, value in self.params.items():
            self.grads[name] = np.zeros_like(value)


class Dense(Layer):
    """y = x W + b, weights uniform in +-1/sqrt(fan_in)."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator) -> None:
        super().__init__()
        bound = 1.0 / math.sqrt(fan_in) if fan_in else 0.0
        self.params["W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        self.params["b"] = np.zeros(fan_out)
        self.zero_grad()
        self._x: np.ndarray | None = None

    def forward(self, x):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad_out):
        self.grads["W"] += self._x.T @ grad_out
        self.grads["b"] += grad_out.sum(axis=0)
        return grad_out @ self.params["W"].T


class Tanh(Layer):
    def __init__(self) -> None:
        super().__init__()
        self._y: np.ndarray | None = None

    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, grad_out):
        return grad_out * (1.0 - self._y**2)


class Sequential(Layer):
    def __init__(self, layers: list[Layer]) -> None:
        super().__init__()
        self.layers = layers
        for i, layer in enumerate(layers):
            for name, value in layer.params.items():
                self.params[f"{i}.{name}"] = value

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        self.grads = {
            f"{i}.{name}": g for i, layer in enumerate(self.layers) for name, g in layer.grads.items()
        }
        return grad_out

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()
        self.grads = {
            f"{i}.{name}": g for i, layer in enumerate(self.layers) for name, g in layer.grads.items()
        }


def make_network(in_dim: int, out_dim: int, config: NetworkConfig, rng: np.random.Generator) -> Sequential:
    """Linear map, or ``layers`` tanh hidden layers of width ``hidden`` followed by a linear output."""
    if config.arch == "linear":
        return Sequential([Dense(in_dim, out_dim, rng)])
    layers: list[Layer] = []
    width = in_dim
    for _ in range(config.layers):
        layers += [Dense(width, config.hidden, rng), Tanh()]
        width = config.hidden
    layers.append(Dense(width, out_dim, rng))
    return Sequential(layers)
