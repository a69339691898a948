"""Discrete latent graph inference on synthetic point clouds.

An edge model embeds nodes, scores pairs with ``log p_ij = -T dist(x_i, x_j)``
and samples ``k`` neighbours per node with the Gumbel top-k trick. A small
graph-convolution network classifies nodes over the sampled graph. The
classifier learns from cross-entropy; the edge model learns only from the
reward-weighted graph loss, which raises the log-probability of edges around
nodes that beat their running accuracy and lowers it elsewhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import snowflake_net as sn
from .mlp import Mlp, init_mlp, mlp_backward, mlp_forward
from .trainer import AdamState, adam_step

SIMILARITY_SPACES = ("euclidean", "snowflake_activation", "neural_snowflake")
RUNNING_DECAY = 0.9
RUNNING_INIT = 0.5


# ------------------------------------------------------------- edge model

@dataclass
class EdgeProbabilityModel:
    """Encoder, optional snowflake and a positive temperature stored as ``log T``.

    ``dist`` is the squared distance of the similarity space: ``||u - v||**2``
    for euclidean and ``f(||u - v||)**2`` for the snowflake spaces.
    """

    similarity_space: str
    encoder: Mlp | None = None
    snowflake: sn.NeuralSnowflake | None = None
    log_temperature: float = math.log(4.0)

    def __post_init__(self):
        if self.similarity_space not in SIMILARITY_SPACES:
            raise ValueError(f"unknown similarity space {self.similarity_space!r}")
        if self.similarity_space != "euclidean" and self.snowflake is None:
            raise ValueError(f"{self.similarity_space} needs a snowflake network")

    @property
    def temperature(self) -> float:
        return math.exp(self.log_temperature)

    @classmethod
    def create(cls, similarity_space: str, input_dim: int, latent_dim: int, seed=None,
               hidden: int = 16, temperature: float = 4.0) -> "EdgeProbabilityModel":
        rng = np.random.default_rng(seed)
        enc_seed, snow_seed = (int(v) for v in rng.integers(0, 2**31, size=2))
        encoder = init_mlp([input_dim, hidden, latent_dim], seed=enc_seed)
        snowflake = None
        if similarity_space == "snowflake_activation":
            snowflake = sn.activation_config(skip_weight=0.0)
        elif similarity_space == "neural_snowflake":
            snowflake = sn.init([1, 20, 1], seed=snow_seed, skip_weight=sn.SKIP_INIT)
        return cls(similarity_space, encoder, snowflake, math.log(temperature))

    def embed(self, features: np.ndarray) -> np.ndarray:
        return features if self.encoder is None else mlp_forward(self.encoder, features)

    def distance(self, r: np.ndarray) -> np.ndarray:
        """Squared space distance as a function of the Euclidean gap ``r``."""
        if self.snowflake is None:
            return r * r
        f = sn.forward(self.snowflake, r)
        return f * f

    # parameter groups
    def main_parameters(self) -> dict:
        params = {"log_T": np.array([self.log_temperature])}
        if self.encoder is not None:
            params.update({f"enc.{k}": v for k, v in self.encoder.parameters().items()})
        if self.snowflake is not None:
            params.update({f"snow.{k}": v for k, v in self.snowflake.parameters().items()})
            if self.similarity_space == "neural_snowflake":
                params["snow.skip"] = np.array([self.snowflake.skip_weight])
        return params

    def load_main(self, params: dict) -> None:
        self.log_temperature = float(params["log_T"][0])
        if self.encoder is not None:
            self.encoder.load_parameters({k[4:]: v for k, v in params.items() if k.startswith("enc.")})
        if self.snowflake is not None:
            self.snowflake.load_parameters({k[5:]: v for k, v in params.items() if k.startswith("snow.")})
            if "snow.skip" in params:
                self.snowflake.skip_weight = float(np.clip(params["snow.skip"][0], 0.0, 1.0))

    def p_parameters(self) -> dict:
        return {} if self.snowflake is None else {"p": np.array([self.snowflake.p])}

    def load_p(self, params: dict) -> None:
        if "p" in params:
            self.snowflake.p = float(params["p"][0])


def _pair_gaps(Z: np.ndarray):
    diff = Z[:, None, :] - Z[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def edge_log_probs(model: EdgeProbabilityModel, embeddings) -> np.ndarray:
    """``n x n`` matrix of ``log p_ij = -T dist(x_i, x_j)`` for already-embedded nodes.

    The diagonal is set to ``-inf`` so a node never samples itself.
    """
    Z = np.asarray(embeddings, dtype=float)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise ValueError("need at least two embedded nodes")
    r = _pair_gaps(Z)
    logp = -model.temperature * model.distance(r.ravel()).reshape(r.shape)
    np.fill_diagonal(logp, -np.inf)
    return logp


def gumbel_top_k(log_probs_row, k: int, noise) -> np.ndarray:
    """Indices of the ``k`` largest keys ``log p_j - log(-log q_j)``, best first."""
    log_probs_row = np.asarray(log_probs_row, dtype=float)
    noise = np.asarray(noise, dtype=float)
    n = log_probs_row.size
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the row length {n}")
    if noise.shape != log_probs_row.shape or np.any(noise <= 0) or np.any(noise >= 1):
        raise ValueError("noise must hold one uniform in (0, 1) per entry")
    keys = log_probs_row - np.log(-np.log(noise))
    # stable sort keeps ties in index order, so equal keys stay deterministic
    return np.argsort(-keys, kind="stable")[:k]


def sample_edges(log_probs: np.ndarray, k: int, noise: np.ndarray) -> np.ndarray:
    """Gumbel top-k per row; returns an ``(n*k, 2)`` array of directed edges ``(i, j)``."""
    n = log_probs.shape[0]
    keys = log_probs - np.log(-np.log(noise))
    np.fill_diagonal(keys, -np.inf)
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of nodes {n}")
    nbrs = np.argsort(-keys, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    return np.stack([rows, nbrs.ravel()], axis=1)


# ---------------------------------------------------------------- rewards

@dataclass
class RunningAccuracy:
    """Exponential moving average of per-node correctness."""

    values: np.ndarray
    decay: float = RUNNING_DECAY

    @classmethod
    def create(cls, n: int, decay: float = RUNNING_DECAY) -> "RunningAccuracy":
        return cls(np.full(n, RUNNING_INIT), decay)


def reward(y_true, y_pred, running) -> float | np.ndarray:
    """``E(ac_i) - ac_i``: positive when a node does worse than usual."""
    ac = (np.asarray(y_true) == np.asarray(y_pred)).astype(float)
    out = np.asarray(running, dtype=float) - ac
    return float(out) if out.ndim == 0 else out


def update_running_accuracy(running, ac, decay: float = RUNNING_DECAY):
    ac_arr = np.asarray(ac, dtype=float)
    if np.any((ac_arr != 0) & (ac_arr != 1)):
        raise ValueError("accuracy indicators must be 0 or 1")
    out = decay * np.asarray(running, dtype=float) + (1.0 - decay) * ac_arr
    return float(out) if out.ndim == 0 else out


def graph_learning_loss(rewards, sampled_edges, log_probs):
    """``sum_i delta_i sum_l sum_{j:(i,j)} log p_ij^(l)`` and its gradient per layer.

    ``sampled_edges`` and ``log_probs`` are lists with one entry per graph layer;
    the gradient with respect to ``log p_ij`` is ``delta_i`` on every sampled
    edge (accumulated if an edge repeats) and zero elsewhere.
    """
    delta = np.asarray(rewards, dtype=float)
    n = delta.size
    loss = 0.0
    grads = []
    for edges, logp in zip(sampled_edges, log_probs):
        edges = np.asarray(edges, dtype=int).reshape(-1, 2)
        logp = np.asarray(logp, dtype=float)
        if edges.size and (edges.min() < 0 or edges.max() >= n or edges.max() >= logp.shape[0]):
            raise IndexError("edge references a node outside the graph")
        i, j = edges[:, 0], edges[:, 1]
        loss += float(np.sum(delta[i] * logp[i, j]))
        g = np.zeros_like(logp)
        np.add.at(g, (i, j), delta[i])
        grads.append(g)
    return loss, grads


# --------------------------------------------------------------------- GCN

def elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _delu(z):
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


@dataclass
class GcnLayer:
    """``h_i' = act(W mean_{j in N(i) + i} h_j + W_root h_i)``.

    ``root`` may be None, giving the plain mean-aggregation layer. ``activation``
    is ``"elu"`` or ``None`` (identity, for the output layer).
    """

    weight: np.ndarray
    root: np.ndarray | None = None
    activation: str | None = "elu"

    def __post_init__(self):
        self.weight = np.atleast_2d(np.asarray(self.weight, dtype=float))
        if self.root is not None:
            self.root = np.atleast_2d(np.asarray(self.root, dtype=float))
            if self.root.shape != self.weight.shape:
                raise ValueError("root weight must match the neighbour weight shape")

    @classmethod
    def create(cls, d_in: int, d_out: int, rng: np.random.Generator, root: bool = True,
               activation: str | None = "elu") -> "GcnLayer":
        bound = math.sqrt(6.0 / (d_in + d_out))
        W = rng.uniform(-bound, bound, size=(d_out, d_in))
        R = rng.uniform(-bound, bound, size=(d_out, d_in)) if root else None
        return cls(W, R, activation)


def mean_aggregation(n: int, edges) -> np.ndarray:
    """Row-normalised ``A + I`` where row ``i`` lists ``i`` and its neighbours ``N(i)``."""
    M = np.eye(n)
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    if edges.size:
        if edges.min() < 0 or edges.max() >= n:
            raise IndexError("edge references a node outside the graph")
        M[edges[:, 0], edges[:, 1]] = 1.0
    return M / M.sum(axis=1, keepdims=True)


def gcn_forward(layer: GcnLayer, features, edges, _cache: list | None = None) -> np.ndarray:
    H = np.atleast_2d(np.asarray(features, dtype=float))
    if H.shape[1] != layer.weight.shape[1]:
        raise ValueError(f"features have dimension {H.shape[1]}, layer expects {layer.weight.shape[1]}")
    M = mean_aggregation(H.shape[0], edges)
    agg = M @ H
    Z = agg @ layer.weight.T
    if layer.root is not None:
        Z = Z + H @ layer.root.T
    if _cache is not None:
        _cache.append((H, M, agg, Z))
    return elu(Z) if layer.activation == "elu" else Z


def gcn_backward(layer: GcnLayer, cache, upstream):
    """Gradients ``(d_weight, d_root, d_features)`` of ``sum(upstream * output)``."""
    H, M, agg, Z = cache
    dZ = upstream * _delu(Z) if layer.activation == "elu" else upstream
    dW = dZ.T @ agg
    dH = M.T @ (dZ @ layer.weight)
    dR = None
    if layer.root is not None:
        dR = dZ.T @ H
        dH = dH + dZ @ layer.root
    return dW, dR, dH


@dataclass
class GcnClassifier:
    layers: list

    @classmethod
    def create(cls, sizes, rng: np.random.Generator, root: bool = True) -> "GcnClassifier":
        n = len(sizes) - 1
        return cls([GcnLayer.create(sizes[i], sizes[i + 1], rng, root,
                                    "elu" if i < n - 1 else None) for i in range(n)])

    def forward(self, X, edges):
        caches = []
        h = X
        for layer in self.layers:
            h = gcn_forward(layer, h, edges, caches)
        return h, caches

    def backward(self, caches, d_logits):
        """Parameter gradients and the gradient with respect to the input features."""
        grads = {}
        g = d_logits
        for idx in range(len(self.layers) - 1, -1, -1):
            dW, dR, g = gcn_backward(self.layers[idx], caches[idx], g)
            grads[f"W{idx}"] = dW
            if dR is not None:
                grads[f"R{idx}"] = dR
        return grads, g

    def parameters(self) -> dict:
        params = {}
        for idx, layer in enumerate(self.layers):
            params[f"W{idx}"] = layer.weight
            if layer.root is not None:
                params[f"R{idx}"] = layer.root
        return params

    def load_parameters(self, params: dict) -> None:
        for idx, layer in enumerate(self.layers):
            layer.weight = params[f"W{idx}"]
            if layer.root is not None:
                layer.root = params[f"R{idx}"]


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray):
    """Mean cross-entropy over ``mask`` and its gradient with respect to ``logits``."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logsm = shifted - logZ
    idx = np.flatnonzero(mask)
    m = max(idx.size, 1)
    loss = -float(np.sum(logsm[idx, labels[idx]])) / m
    grad = np.zeros_like(logits)
    grad[idx] = np.exp(logsm[idx])
    grad[idx, labels[idx]] -= 1.0
    return loss, grad / m


# ------------------------------------------------------------- experiment

@dataclass
class LatentGraphConfig:
    similarity_space: str = "euclidean"
    k: int = 7
    latent_dim: int = 4
    seeds: list = field(default_factory=lambda: list(range(10)))
    epochs: int = 100
    n_nodes: int = 300
    num_classes: int = 3
    feature_dim: int = 8
    cluster_spread: float = 1.0
    class_separation: float = 4.0
    train_fraction: float = 0.6
    hidden: int = 16
    gcn_layers: int = 3
    lr: float = 1e-2
    lr_p: float = 1e-4
    temperature: float = 4.0
    gl_into_encoder: bool = False
    phi: str = "temperature_times_squared_distance"

    def __post_init__(self):
        if self.similarity_space not in SIMILARITY_SPACES:
            raise ValueError(f"unknown similarity space {self.similarity_space!r}")
        if self.n_nodes > 2000:
            raise ValueError("the harness is sized for at most 2000 nodes")
        if not 1 <= self.k < self.n_nodes:
            raise ValueError("k must lie in [1, n_nodes)")
        if self.epochs < 0 or self.num_classes < 2:
            raise ValueError("invalid epochs or class count")

    @classmethod
    def from_dict(cls, data: dict) -> "LatentGraphConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def make_blobs(config: LatentGraphConfig, rng: np.random.Generator):
    """Isotropic Gaussian class blobs with centres on a random sphere of radius ``class_separation``."""
    centres = rng.standard_normal((config.num_classes, config.feature_dim))
    centres *= config.class_separation / np.linalg.norm(centres, axis=1, keepdims=True)
    labels = rng.integers(0, config.num_classes, size=config.n_nodes)
    X = centres[labels] + config.cluster_spread * rng.standard_normal((config.n_nodes, config.feature_dim))
    return X, labels


def _uniform_open(rng: np.random.Generator, shape) -> np.ndarray:
    q = rng.random(shape)
    # random() can return exactly 0
    return np.where(q > 0, q, np.nextafter(0.0, 1.0))


def _edge_model_grads(model: EdgeProbabilityModel, Z, edges, d_logp_edges):
    """Backpropagate ``d L / d log p`` on sampled edges into the edge model parameters."""
    i, j = edges[:, 0], edges[:, 1]
    diff = Z[i] - Z[j]
    r = np.sqrt(np.sum(diff * diff, axis=1))
    T = model.temperature
    dist = model.distance(r)
    grads = {"log_T": np.array([-T * float(np.sum(d_logp_edges * dist))])}
    d_dist = -T * d_logp_edges
    pgrads = {}
    if model.snowflake is None:
        d_r = d_dist * 2.0 * r
    else:
        f = sn.forward(model.snowflake, r)
        g = sn.backward(model.snowflake, r, upstream=d_dist * 2.0 * f)
        grads.update({f"snow.{k}": v for k, v in sn.gradient_dict(g).items()})
        if "snow.skip" in model.main_parameters():
            grads["snow.skip"] = np.array([g.d_skip])
        pgrads["p"] = np.array([g.d_p])
        d_r = np.asarray(g.d_input)
    unit = np.where(r[:, None] > 0, diff / np.where(r > 0, r, 1.0)[:, None], 0.0)
    dZ = np.zeros_like(Z)
    np.add.at(dZ, i, d_r[:, None] * unit)
    np.add.at(dZ, j, -d_r[:, None] * unit)
    return grads, pgrads, dZ


@dataclass
class SplitResult:
    seed: int
    test_accuracy: float
    train_accuracy: float
    loss_trace: list
    gl_trace: list
    temperature: float
    p: float | None


def run_split(config: LatentGraphConfig, seed: int) -> SplitResult:
    root = np.random.SeedSequence([seed, 7919])
    s_data, s_split, s_model, s_gcn, s_noise = root.spawn(5)
    X, y = make_blobs(config, np.random.default_rng(s_data))
    n = config.n_nodes
    perm = np.random.default_rng(s_split).permutation(n)
    train_mask = np.zeros(n, dtype=bool)
    train_mask[perm[: int(round(config.train_fraction * n))]] = True
    test_mask = ~train_mask

    model = EdgeProbabilityModel.create(config.similarity_space, config.feature_dim,
                                        config.latent_dim, seed=int(s_model.generate_state(1)[0]),
                                        hidden=config.hidden, temperature=config.temperature)
    encoder = model.encoder
    sizes = [config.latent_dim] + [config.hidden] * (config.gcn_layers - 1) + [config.num_classes]
    gcn = GcnClassifier.create(sizes, np.random.default_rng(s_gcn))
    noise_rng = np.random.default_rng(s_noise)
    running = RunningAccuracy.create(n)

    gcn_state, edge_state, p_state = AdamState(), AdamState(), AdamState()
    loss_trace, gl_trace = [], []
    for _ in range(config.epochs):
        # the encoder output feeds both the classifier and the edge model
        Z = model.embed(X)
        logp = edge_log_probs(model, Z)
        edges = sample_edges(logp, config.k, _uniform_open(noise_rng, logp.shape))

        logits, caches = gcn.forward(Z, edges)
        loss, d_logits = softmax_cross_entropy(logits, y, train_mask)
        g_gcn, dZ_ce = gcn.backward(caches, d_logits)

        pred = logits.argmax(axis=1)
        delta = np.where(train_mask, reward(y, pred, running.values), 0.0)
        ac = (pred == y).astype(float)
        running.values = np.where(train_mask, update_running_accuracy(running.values, ac), running.values)
        gl, (g_logp,) = graph_learning_loss(delta, [edges], [logp])
        # a top-k row never repeats a neighbour, so per-edge gradients are exact
        g_edges = g_logp[edges[:, 0], edges[:, 1]]
        g_edge, g_p, dZ_gl = _edge_model_grads(model, Z, edges, g_edges)

        dZ = dZ_ce + dZ_gl if config.gl_into_encoder else dZ_ce
        g_enc = mlp_backward(encoder, X, dZ).as_dict()
        params = {f"gcn.{k}": v for k, v in gcn.parameters().items()}
        params.update({f"enc.{k}": v for k, v in encoder.parameters().items()})
        grads = {f"gcn.{k}": v for k, v in g_gcn.items()}
        grads.update({f"enc.{k}": v for k, v in g_enc.items()})
        new = adam_step(gcn_state, params, grads, config.lr)
        gcn.load_parameters({k[4:]: v for k, v in new.items() if k.startswith("gcn.")})
        encoder.load_parameters({k[4:]: v for k, v in new.items() if k.startswith("enc.")})

        edge_params = {k: v for k, v in model.main_parameters().items() if not k.startswith("enc.")}
        edge_new = adam_step(edge_state, edge_params, g_edge, config.lr)
        model.load_main({**model.main_parameters(), **edge_new})
        if g_p:
            model.load_p(adam_step(p_state, model.p_parameters(), g_p, config.lr_p))
        loss_trace.append(loss)
        gl_trace.append(gl)

    # evaluation graph: noiseless top-k (q = 1/e makes the Gumbel term vanish)
    Z = model.embed(X)
    logp = edge_log_probs(model, Z)
    edges = sample_edges(logp, config.k, np.full(logp.shape, math.exp(-1.0)))
    logits, _ = gcn.forward(Z, edges)
    pred = logits.argmax(axis=1)
    return SplitResult(
        seed=seed,
        test_accuracy=float(np.mean(pred[test_mask] == y[test_mask])),
        train_accuracy=float(np.mean(pred[train_mask] == y[train_mask])),
        loss_trace=[float(v) for v in loss_trace],
        gl_trace=[float(v) for v in gl_trace],
        temperature=model.temperature,
        p=None if model.snowflake is None else model.snowflake.p,
    )


@dataclass
class LatentGraphReport:
    similarity_space: str
    mean_accuracy: float
    std_accuracy: float
    accuracies: list
    config: dict
    splits: list = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "similarity_space": self.similarity_space,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "accuracies": self.accuracies,
            "phi": self.config.get("phi"),
            "config": self.config,
            "splits": [asdict(s) for s in self.splits],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def report_from_splits(config: LatentGraphConfig, splits) -> LatentGraphReport:
    acc = np.array([s.test_accuracy for s in splits])
    return LatentGraphReport(
        similarity_space=config.similarity_space,
        mean_accuracy=float(acc.mean()) if acc.size else math.nan,
        std_accuracy=float(acc.std()) if acc.size else math.nan,
        accuracies=acc.tolist(),
        config=config.to_dict(),
        splits=list(splits),
    )


def run_latent_graph_experiment(config: LatentGraphConfig) -> LatentGraphReport:
    """Train on every seed in ``config.seeds`` and summarise test accuracy as mean and std."""
    return report_from_splits(config, [run_split(config, int(s)) for s in config.seeds])
