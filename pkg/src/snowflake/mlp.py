"""ReLU multilayer perceptron encoder with manual reverse-mode gradients.

Layers are stored in evaluation order (input to output). Layer ``j`` holds a
weight of shape ``(d_out, d_in)`` and a bias of shape ``(d_out,)``; ReLU sits
between consecutive affine maps and not after the last one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass
class Mlp:
    weights: list
    biases: list

    def __post_init__(self):
        self.weights = [np.atleast_2d(np.asarray(W, dtype=float)) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float).reshape(-1) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for W, b in zip(self.weights, self.biases):
            if W.shape[0] != b.size:
                raise ValueError(f"bias of size {b.size} does not match weight {W.shape}")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ValueError(f"weights {prev.shape} and {nxt.shape} do not chain")

    @property
    def sizes(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    def __call__(self, x):
        return mlp_forward(self, x)

    def parameters(self) -> dict:
        params = {}
        for j, (W, b) in enumerate(zip(self.weights, self.biases)):
            params[f"W{j}"] = W
            params[f"b{j}"] = b
        return params

    def load_parameters(self, params: dict) -> None:
        for j in range(len(self.weights)):
            self.weights[j] = np.asarray(params.get(f"W{j}", self.weights[j]), dtype=float)
            self.biases[j] = np.asarray(params.get(f"b{j}", self.biases[j]), dtype=float)

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "weights": [W.ravel().tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        sizes = data["sizes"]
        weights = [np.array(W, dtype=float).reshape(sizes[j + 1], sizes[j])
                   for j, W in enumerate(data["weights"])]
        return cls(weights, [np.array(b, dtype=float) for b in data["biases"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Mlp":
        return cls.from_dict(json.loads(text))


def init_mlp(sizes, seed=None) -> Mlp:
    """He-uniform weights ``U(+-sqrt(6/fan_in))`` and biases ``U(+-1/sqrt(fan_in))``."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in))
    return Mlp(weights, biases)


def layer_sizes(input_dim: int, output_dim: int, n_layers: int, hidden: int) -> list:
    """Sizes for ``n_layers`` affine maps of constant hidden width."""
    return [input_dim] + [hidden] * (n_layers - 1) + [output_dim]


def _forward_cached(net: Mlp, X: np.ndarray):
    acts = [X]
    pre = []
    h = X
    last = len(net.weights) - 1
    for j, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W.T + b
        if j == last:
            return z, acts, pre
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)


def mlp_forward(net: Mlp, x):
    """Evaluate on one point (shape ``(D,)``) or a batch (shape ``(n, D)``)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"expected input dimension {net.input_dim}, got {x.shape[-1]}")
    out, _, _ = _forward_cached(net, np.atleast_2d(x))
    return out[0] if x.ndim == 1 else out


@dataclass
class MlpGradients:
    d_weights: list
    d_biases: list
    d_input: np.ndarray

    def as_dict(self) -> dict:
        out = {}
        for j, (gW, gb) in enumerate(zip(self.d_weights, self.d_biases)):
            out[f"W{j}"], out[f"b{j}"] = gW, gb
        return out


def mlp_backward(net: Mlp, x, upstream) -> MlpGradients:
    """Gradients of ``sum(upstream * net(x))``, summed over the batch.

    ReLU uses subgradient 0 at 0.
    """
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    G = np.atleast_2d(np.asarray(upstream, dtype=float))
    _, acts, pre = _forward_cached(net, X)
    if G.shape != (X.shape[0], net.output_dim):
        raise ValueError(f"upstream shape {G.shape} does not match output")

    n = len(net.weights)
    d_W, d_b = [None] * n, [None] * n
    for j in range(n - 1, -1, -1):
        d_W[j] = G.T @ acts[j]
        d_b[j] = G.sum(axis=0)
        G = G @ net.weights[j]
        if j > 0:
            G = G * (pre[j - 1] > 0)
    d_input = G[0] if x.ndim == 1 else G
    return MlpGradients(d_W, d_b, d_input)


class ParamCount(NamedTuple):
    nonzero: int
    width: int
    depth: int

    @property
    def bound(self) -> int:
        """``W**2 (depth + 1)``, the usual budget for a width-W network."""
        return self.width ** 2 * (self.depth + 1)

    @property
    def within_bound(self) -> bool:
        return self.nonzero <= self.bound


def param_count(net: Mlp) -> ParamCount:
    """Nonzero parameters, width (largest layer size) and depth (number of affine maps)."""
    nonzero = sum(int(np.count_nonzero(W)) + int(np.count_nonzero(b))
                  for W, b in zip(net.weights, net.biases))
    return ParamCount(nonzero, max(net.sizes), len(net.weights))


def total_params(net: Mlp) -> int:
    """Number of trainable entries, zero or not."""
    return sum(W.size + b.size for W, b in zip(net.weights, net.biases))
