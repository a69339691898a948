"""Trainable neural snowflake ``f: [0, inf) -> [0, inf)`` with hand-written gradients.

Each layer maps ``t_prev -> |B| (sigma(|A| t_prev) |C|)`` where ``sigma`` is the
tensorized snowflake activation; the last layer output is raised to ``1 + |p|``
and optionally mixed with the identity through ``skip_weight``. Stored weights
are unconstrained; the network always uses their absolute values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .quasimetric import relaxed_triangle_constant

P_INIT = 1e-8
SKIP_INIT = 0.5


def tensorized_activation(u, a: float = 1.0, b: float = 1.0) -> np.ndarray:
    """Rows ``(1 - exp(-|u_j|), |u_j|**a, log(1 + |u_j|)**b)`` for a vector ``u``."""
    if not 0 < a <= 1 or not 0 <= b <= 1:
        raise ValueError("need a in (0, 1] and b in [0, 1]")
    return _sigma(np.abs(np.asarray(u, dtype=float)), a, b)


def _columns(au: np.ndarray, a: float, b: float):
    """The three activation columns of ``|u|``, kept as separate arrays."""
    bounded = -np.expm1(-au)
    if a == 1.0 and b == 1.0:
        return bounded, au, np.log1p(au)
    pos = au > 0
    safe = np.where(pos, au, 1.0)
    frac = np.where(pos, safe ** a, 0.0)
    irr = np.where(pos, np.log1p(safe) ** b, 0.0)
    return bounded, frac, irr


def _sigma(au: np.ndarray, a: float, b: float) -> np.ndarray:
    return np.stack(_columns(au, a, b), axis=-1)


def _dcolumns(au: np.ndarray, a: float, b: float):
    """Derivatives of the activation columns with respect to ``|u|``; 0 at ``|u| = 0`` when singular."""
    dbounded = np.exp(-au)
    if a == 1.0 and b == 1.0:
        return dbounded, np.ones_like(au), 1.0 / (1.0 + au)
    pos = au > 0
    safe = np.where(pos, au, 1.0)
    dfrac = np.where(pos, a * safe ** (a - 1.0), 0.0)
    dirr = np.where(pos, b * np.log1p(safe) ** (b - 1.0) / (1.0 + safe), 0.0)
    return dbounded, dfrac, dirr


@dataclass
class SnowflakeLayer:
    A: np.ndarray  # (hidden, d_prev)
    B: np.ndarray  # (d_out, hidden)
    C: np.ndarray  # (3,)
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.asarray(self.C, dtype=float).reshape(3)
        if self.B.shape[1] != self.A.shape[0]:
            raise ValueError(f"A {self.A.shape} and B {self.B.shape} do not chain")
        if not 0 < self.a <= 1 or not 0 <= self.b <= 1:
            raise ValueError("need a in (0, 1] and b in [0, 1]")

    @property
    def d_in(self) -> int:
        return self.A.shape[1]

    @property
    def d_out(self) -> int:
        return self.B.shape[0]


@dataclass
class SnowflakeGradients:
    d_A: list
    d_B: list
    d_C: list
    d_p: float
    d_skip: float
    d_input: np.ndarray | float


@dataclass
class NeuralSnowflake:
    layers: list
    p: float = P_INIT
    skip_weight: float = SKIP_INIT
    seed: int | None = None

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a neural snowflake needs at least one layer")
        if self.layers[0].d_in != 1 or self.layers[-1].d_out != 1:
            raise ValueError("first input and last output dimension must be 1")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.d_out != nxt.d_in:
                raise ValueError("layer dimension chain is inconsistent")
        if not 0 <= self.skip_weight <= 1:
            raise ValueError("skip_weight must lie in [0, 1]")

    @property
    def dim_chain(self) -> list:
        return [self.layers[0].d_in] + [layer.d_out for layer in self.layers]

    @property
    def exponent(self) -> float:
        return 1.0 + abs(self.p)

    @property
    def triangle_constant(self) -> float:
        return relaxed_triangle_constant(self.exponent)

    def __call__(self, t):
        return forward(self, t)

    # parameter groups -------------------------------------------------
    def parameters(self) -> dict:
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"A{i}"] = layer.A
            params[f"B{i}"] = layer.B
            params[f"C{i}"] = layer.C
        return params

    def load_parameters(self, params: dict) -> None:
        for i, layer in enumerate(self.layers):
            layer.A = np.asarray(params.get(f"A{i}", layer.A), dtype=float)
            layer.B = np.asarray(params.get(f"B{i}", layer.B), dtype=float)
            layer.C = np.asarray(params.get(f"C{i}", layer.C), dtype=float)

    def param_count(self) -> int:
        """Trainable entries: all A, B, C weights plus the exponent offset p."""
        return sum(v.size for v in self.parameters().values()) + 1

    # checkpoints ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "dim_chain": self.dim_chain,
            "hidden": [layer.A.shape[0] for layer in self.layers],
            "layers": [
                {
                    "A": layer.A.ravel().tolist(),
                    "B": layer.B.ravel().tolist(),
                    "C": layer.C.tolist(),
                    "a": layer.a,
                    "b": layer.b,
                }
                for layer in self.layers
            ],
            "p": self.p,
            "skip_weight": self.skip_weight,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NeuralSnowflake":
        chain, hidden = data["dim_chain"], data["hidden"]
        layers = []
        for i, spec in enumerate(data["layers"]):
            h = hidden[i]
            layers.append(SnowflakeLayer(
                A=np.array(spec["A"], dtype=float).reshape(h, chain[i]),
                B=np.array(spec["B"], dtype=float).reshape(chain[i + 1], h),
                C=np.array(spec["C"], dtype=float),
                a=spec.get("a", 1.0),
                b=spec.get("b", 1.0),
            ))
        return cls(layers, p=data["p"], skip_weight=data["skip_weight"], seed=data.get("seed"))

    def to_json(self) -> str:
        # repr-based float encoding round-trips 64-bit values exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "NeuralSnowflake":
        return cls.from_dict(json.loads(text))


def init(dim_chain, seed=None, hidden=None, p: float = P_INIT,
         skip_weight: float = SKIP_INIT) -> NeuralSnowflake:
    """Random neural snowflake.

    ``dim_chain`` lists ``d_0 = 1, d_1, ..., d_I = 1``. ``hidden`` gives the inner
    width of every layer and defaults to ``d_i`` (square ``B``), which is the
    layout used in the synthetic experiments. Every raw entry of an ``r x c``
    matrix is uniform on ``[0, 1/(r c)]``.
    """
    dim_chain = [int(d) for d in dim_chain]
    if len(dim_chain) < 2 or dim_chain[0] != 1 or dim_chain[-1] != 1:
        raise ValueError(f"invalid dim chain {dim_chain}: must start and end with 1")
    if any(d < 1 for d in dim_chain):
        raise ValueError("layer sizes must be positive")
    n_layers = len(dim_chain) - 1
    if hidden is None:
        # the inner width of the last layer follows its input, since d_I = 1
        hidden = [dim_chain[i + 1] if i + 1 < n_layers else dim_chain[i] for i in range(n_layers)]
    rng = np.random.default_rng(seed)

    def draw(r, c):
        return rng.uniform(0.0, 1.0 / (r * c), size=(r, c))

    layers = []
    for i in range(n_layers):
        h = int(hidden[i])
        A = draw(h, dim_chain[i])
        B = draw(dim_chain[i + 1], h)
        C = draw(3, 1).ravel()
        layers.append(SnowflakeLayer(A, B, C))
    return NeuralSnowflake(layers, p=p, skip_weight=skip_weight, seed=seed)


def identity_config(p: float = 0.0) -> NeuralSnowflake:
    """One-layer network with ``A = B = 1`` and ``C = e_2``, so ``f(t) = t**(1+|p|)``."""
    layer = SnowflakeLayer(np.ones((1, 1)), np.ones((1, 1)), np.array([0.0, 1.0, 0.0]))
    return NeuralSnowflake([layer], p=p, skip_weight=0.0)


def activation_config(c=(1.0, 1.0, 1.0), p: float = P_INIT,
                      skip_weight: float = 0.0) -> NeuralSnowflake:
    """Single-unit network equal to the snowflake activation with alpha = beta = gamma = 1.

    During training ``|A|`` acts as a learnable gamma-like input scale and
    ``|B|`` as an overall scale.
    """
    layer = SnowflakeLayer(np.ones((1, 1)), np.ones((1, 1)), np.asarray(c, dtype=float))
    return NeuralSnowflake([layer], p=p, skip_weight=skip_weight)


def _forward_cached(net: NeuralSnowflake, t: np.ndarray):
    cache = []
    h = t[:, None]
    for layer in net.layers:
        absA, absB, absC = np.abs(layer.A), np.abs(layer.B), np.abs(layer.C)
        u = h @ absA.T
        au = np.abs(u)
        cols = _columns(au, layer.a, layer.b)
        v = absC[0] * cols[0] + absC[1] * cols[1] + absC[2] * cols[2]
        cache.append((h, u, au, cols, v))
        h = v @ absB.T
    t_last = h[:, 0]
    raw = t_last ** net.exponent
    return t_last, raw, cache


def forward(net: NeuralSnowflake, t):
    """Evaluate ``f`` at a scalar or array of non-negative inputs."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise ValueError("neural snowflake inputs must be non-negative")
    flat = arr.reshape(-1)
    _, raw, _ = _forward_cached(net, flat)
    out = net.skip_weight * flat + (1.0 - net.skip_weight) * raw
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def backward(net: NeuralSnowflake, t, upstream=None) -> SnowflakeGradients:
    """Reverse-mode gradients of ``sum(upstream * f(t))``.

    ``upstream`` defaults to ones. Non-differentiable points (``|u| = 0`` and a
    zero last-layer output) use subgradient 0.
    """
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise ValueError("neural snowflake inputs must be non-negative")
    flat = arr.reshape(-1)
    g = np.ones_like(flat) if upstream is None else np.asarray(upstream, dtype=float).reshape(-1)

    t_last, raw, cache = _forward_cached(net, flat)
    s = net.skip_weight
    d_skip = float(np.sum(g * (flat - raw)))
    d_raw = g * (1.0 - s)

    q = abs(net.p)
    pos = t_last > 0
    safe = np.where(pos, t_last, 1.0)
    d_h = np.where(pos, d_raw * net.exponent * safe ** q, 0.0)
    if q == 0:
        # t**1 has slope 1 everywhere, including t = 0
        d_h = d_raw.copy()
    d_p = float(np.sum(np.where(pos, d_raw * raw * np.log(safe), 0.0))) * float(np.sign(net.p))
    d_h = d_h[:, None]

    d_A, d_B, d_C = [], [], []
    for layer, (h, u, au, cols, v) in zip(reversed(net.layers), reversed(cache)):
        absA, absB, absC = np.abs(layer.A), np.abs(layer.B), np.abs(layer.C)
        d_v = d_h @ absB
        d_B.append((d_h.T @ v) * np.sign(layer.B))
        d_C.append(np.array([np.vdot(d_v, c) for c in cols]) * np.sign(layer.C))
        dcols = _dcolumns(au, layer.a, layer.b)
        d_au = d_v * (absC[0] * dcols[0] + absC[1] * dcols[1] + absC[2] * dcols[2])
        d_u = d_au * np.sign(u)
        d_A.append((d_u.T @ h) * np.sign(layer.A))
        d_h = d_u @ absA

    d_input = s * g + d_h[:, 0]
    return SnowflakeGradients(
        d_A=d_A[::-1], d_B=d_B[::-1], d_C=d_C[::-1],
        d_p=d_p, d_skip=d_skip,
        d_input=float(d_input[0]) if arr.ndim == 0 else d_input.reshape(arr.shape),
    )


def gradient_dict(grads: SnowflakeGradients) -> dict:
    """Gradients keyed like :meth:`NeuralSnowflake.parameters`."""
    out = {}
    for i, (gA, gB, gC) in enumerate(zip(grads.d_A, grads.d_B, grads.d_C)):
        out[f"A{i}"], out[f"B{i}"], out[f"C{i}"] = gA, gB, gC
    return out


def snowflake_metric(net: NeuralSnowflake, x, y) -> float:
    """``f(||x - y||)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return forward(net, float(np.linalg.norm(x - y)))
