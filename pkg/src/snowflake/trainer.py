"""Pairwise-distance regression: models, Adam, and the synthetic embedding experiment."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import graphs
from . import snowflake_net as sn
from .mlp import Mlp, init_mlp, layer_sizes, mlp_backward, mlp_forward, total_params

log = logging.getLogger(__name__)

MODEL_KINDS = ("mlp_only", "snowflake_plus_mlp", "snowflake_direct")


@dataclass
class ExperimentConfig:
    metric_id: str = "M1"
    model_kind: str = "snowflake_direct"
    ambient_dim: int = 100
    embed_dim: int = 2
    train_pairs: int = 200_000
    test_pairs: int = 10_000
    batch: int = 1000
    epochs: int = 40
    lr_main: float = 1e-4
    lr_p: float = 1e-4
    seed: int = 0
    mlp_layers: int | None = None
    hidden: int = 20
    snowflake_chain: list = field(default_factory=lambda: [1, 20, 1])
    pair_sampling: str = "resampled"
    cloud: str = "clamped_gaussian"

    def __post_init__(self):
        if self.metric_id not in graphs.METRIC_IDS:
            raise ValueError(f"unknown metric id {self.metric_id!r}")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}; expected one of {MODEL_KINDS}")
        if self.train_pairs < 0 or self.test_pairs < 1 or self.batch < 1 or self.epochs < 0:
            raise ValueError("pair counts, batch size and epochs must be positive")
        if self.lr_main <= 0 or self.lr_p <= 0:
            raise ValueError("learning rates must be positive")
        if self.mlp_layers is None:
            # 10 affine layers stand-alone, 5 in front of a snowflake
            self.mlp_layers = 10 if self.model_kind == "mlp_only" else 5

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentReport:
    train_mse: float
    test_mse: float
    param_count: int
    config: dict
    wall_time: float = 0.0
    loss_trace: list = field(default_factory=list)
    p: float | None = None
    model: object = field(default=None, repr=False, compare=False)

    def to_record(self) -> dict:
        """Reproducible JSON record; wall time is kept out on purpose."""
        return {
            "train_mse": self.train_mse,
            "test_mse": self.test_mse,
            "param_count": self.param_count,
            "config": self.config,
            "loss_trace": self.loss_trace,
            "p": self.p,
        }


# ----------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict, lr: float) -> dict:
    """One bias-corrected Adam update; returns new parameter arrays."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    out = {}
    for name, value in params.items():
        g = np.asarray(grads[name], dtype=float)
        value = np.asarray(value, dtype=float)
        if g.shape != value.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {value.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        out[name] = value - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out


# -------------------------------------------------------------------- models

class PairModel:
    """Predicts a distance for each pair ``(x_k, y_k)`` in a batch.

    ``kind`` selects ``||E(x) - E(y)||``, ``f(||E(x) - E(y)||)`` or ``f(||x - y||)``.
    The exponent offset ``p`` of the snowflake is its own parameter group.
    """

    def __init__(self, kind: str, encoder: Mlp | None = None,
                 snowflake: sn.NeuralSnowflake | None = None, train_skip: bool = False):
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        if kind != "snowflake_direct" and encoder is None:
            raise ValueError(f"{kind} needs an encoder")
        if kind != "mlp_only" and snowflake is None:
            raise ValueError(f"{kind} needs a snowflake")
        self.kind = kind
        self.encoder = encoder if kind != "snowflake_direct" else None
        self.snowflake = snowflake if kind != "mlp_only" else None
        self.train_skip = train_skip

    @classmethod
    def from_config(cls, config: ExperimentConfig, rng_seeds) -> "PairModel":
        enc_seed, snow_seed = rng_seeds
        encoder = snowflake = None
        if config.model_kind != "snowflake_direct":
            sizes = layer_sizes(config.ambient_dim, config.embed_dim, config.mlp_layers, config.hidden)
            encoder = init_mlp(sizes, seed=enc_seed)
        if config.model_kind != "mlp_only":
            snowflake = sn.init(config.snowflake_chain, seed=snow_seed, skip_weight=0.0)
        return cls(config.model_kind, encoder, snowflake)

    def param_count(self) -> int:
        n = 0
        if self.encoder is not None:
            n += total_params(self.encoder)
        if self.snowflake is not None:
            n += self.snowflake.param_count()
        return n

    # parameter groups
    def main_parameters(self) -> dict:
        params = {}
        if self.encoder is not None:
            params.update({f"enc.{k}": v for k, v in self.encoder.parameters().items()})
        if self.snowflake is not None:
            params.update({f"snow.{k}": v for k, v in self.snowflake.parameters().items()})
            if self.train_skip:
                params["snow.skip"] = np.array([self.snowflake.skip_weight])
        return params

    def load_main(self, params: dict) -> None:
        if self.encoder is not None:
            self.encoder.load_parameters({k[4:]: v for k, v in params.items() if k.startswith("enc.")})
        if self.snowflake is not None:
            self.snowflake.load_parameters({k[5:]: v for k, v in params.items() if k.startswith("snow.")})
            if "snow.skip" in params:
                self.snowflake.skip_weight = float(np.clip(params["snow.skip"][0], 0.0, 1.0))

    def p_parameters(self) -> dict:
        return {} if self.snowflake is None else {"p": np.array([self.snowflake.p])}

    def load_p(self, params: dict) -> None:
        if self.snowflake is not None and "p" in params:
            self.snowflake.p = float(params["p"][0])

    # evaluation
    def _gap(self, X, Y, gap=None):
        if self.encoder is None:
            if gap is not None:
                return None, np.asarray(gap, dtype=float)
            diff = X - Y
        else:
            diff = mlp_forward(self.encoder, X) - mlp_forward(self.encoder, Y)
        return diff, np.sqrt(np.sum(diff * diff, axis=1))

    def predict(self, X, Y, gap=None) -> np.ndarray:
        """Predicted distances; ``gap`` may supply ``||x - y||`` for the direct snowflake."""
        if X is not None:
            X = np.atleast_2d(np.asarray(X, dtype=float))
            Y = np.atleast_2d(np.asarray(Y, dtype=float))
        _, r = self._gap(X, Y, gap)
        return r if self.snowflake is None else sn.forward(self.snowflake, r)

    def loss_and_grads(self, X, Y, target, gap=None):
        """Mean squared error over the batch and its gradients per parameter group."""
        if X is not None:
            X = np.atleast_2d(np.asarray(X, dtype=float))
            Y = np.atleast_2d(np.asarray(Y, dtype=float))
        target = np.atleast_1d(np.asarray(target, dtype=float))
        n = target.size
        diff, r = self._gap(X, Y, gap)
        main, pgrads = {}, {}
        if self.snowflake is None:
            pred = r
            d_pred = 2.0 * (pred - target) / n
            d_r = d_pred
        else:
            pred = sn.forward(self.snowflake, r)
            d_pred = 2.0 * (pred - target) / n
            g = sn.backward(self.snowflake, r, upstream=d_pred)
            main.update({f"snow.{k}": v for k, v in sn.gradient_dict(g).items()})
            if self.train_skip:
                main["snow.skip"] = np.array([g.d_skip])
            pgrads["p"] = np.array([g.d_p])
            d_r = np.asarray(g.d_input)
        loss = float(np.mean((pred - target) ** 2))

        if self.encoder is not None:
            # d r / d E(x) = diff / r, zero at coincident codes
            unit = np.where(r[:, None] > 0, diff / np.where(r > 0, r, 1.0)[:, None], 0.0)
            G = d_r[:, None] * unit
            grads = mlp_backward(self.encoder, np.vstack([X, Y]), np.vstack([G, -G]))
            main.update({f"enc.{k}": v for k, v in grads.as_dict().items()})
        return loss, main, pgrads


def pair_loss(model: PairModel, x, y, target: float):
    """Squared error ``(predicted_distance - target)**2`` for one pair, with gradients."""
    if target < 0:
        raise ValueError("target distance must be non-negative")
    return model.loss_and_grads(np.atleast_2d(x), np.atleast_2d(y), [target])


# ---------------------------------------------------------------- experiment

def _batch_pairs(config: ExperimentConfig, seed_seq: np.random.SeedSequence, size: int):
    rng = np.random.default_rng(seed_seq)
    X = graphs.sample_pointcloud(size, config.ambient_dim, rng=rng)
    Y = graphs.sample_pointcloud(size, config.ambient_dim, rng=rng)
    return X, Y


class PairDataset:
    """Deterministic set of point pairs, drawn batch by batch from spawned seeds.

    Batches are generated once and reused across epochs (only their order is
    shuffled). When ``keep_points`` is false only the pair distances are kept,
    which is all a snowflake acting on ``||x - y||`` needs.
    """

    def __init__(self, config: ExperimentConfig, n_pairs: int, seed_seq: np.random.SeedSequence,
                 keep_points: bool = True):
        self.config = config
        self.n_pairs = n_pairs
        self.batch = config.batch
        self.n_batches = math.ceil(n_pairs / self.batch) if n_pairs else 0
        self.seeds = seed_seq.spawn(self.n_batches)
        self.keep_points = keep_points
        self._batches = {}

    def get(self, k: int):
        """``(X, Y, s, target)`` for batch ``k``; ``X`` and ``Y`` are None without ``keep_points``."""
        if k not in self._batches:
            size = min(self.batch, self.n_pairs - k * self.batch)
            X, Y = _batch_pairs(self.config, self.seeds[k], size)
            s = np.sqrt(np.sum((X - Y) ** 2, axis=1))
            t = graphs.synthetic_target(self.config.metric_id, s)
            if not self.keep_points:
                X = Y = None
            self._batches[k] = (X, Y, s, t)
        return self._batches[k]

    def mse(self, model: "PairModel") -> float:
        total, count = 0.0, 0
        for k in range(self.n_batches):
            X, Y, s, t = self.get(k)
            total += float(np.sum((model.predict(X, Y, gap=s) - t) ** 2))
            count += t.size
        return total / count if count else math.nan


def run_experiment(config: ExperimentConfig, progress: bool = False) -> ExperimentReport:
    """Train one model on one synthetic metric and report train/test MSE.

    Fully determined by ``config``; the main and ``p`` groups get separate Adam states.
    """
    start = time.perf_counter()
    root = np.random.SeedSequence(config.seed)
    s_train, s_test, s_enc, s_snow, s_order = root.spawn(5)
    enc_seed = int(s_enc.generate_state(1)[0])
    snow_seed = int(s_snow.generate_state(1)[0])
    model = PairModel.from_config(config, (enc_seed, snow_seed))
    keep = config.model_kind != "snowflake_direct"
    train = PairDataset(config, config.train_pairs, s_train, keep_points=keep)
    test = PairDataset(config, config.test_pairs, s_test, keep_points=keep)
    order_rng = np.random.default_rng(s_order)

    main_state, p_state = AdamState(), AdamState()
    trace = []
    for epoch in range(config.epochs if train.n_batches else 0):
        losses = []
        for k in order_rng.permutation(train.n_batches):
            X, Y, s, t = train.get(int(k))
            loss, g_main, g_p = model.loss_and_grads(X, Y, t, gap=s)
            losses.append(loss * t.size)
            model.load_main(adam_step(main_state, model.main_parameters(), g_main, config.lr_main))
            if g_p:
                model.load_p(adam_step(p_state, model.p_parameters(), g_p, config.lr_p))
        trace.append(float(np.sum(losses) / config.train_pairs))
        if progress:
            log.info("%s/%s epoch %d loss %.6g", config.metric_id, config.model_kind, epoch + 1, trace[-1])

    train_mse = train.mse(model) if train.n_batches else math.nan
    report = ExperimentReport(
        train_mse=train_mse,
        test_mse=test.mse(model),
        param_count=model.param_count(),
        config=config.to_dict(),
        wall_time=time.perf_counter() - start,
        loss_trace=trace,
        p=None if model.snowflake is None else model.snowflake.p,
        model=model,
    )
    return report


def write_jsonl(path, reports) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.to_record(), sort_keys=True) + "\n")
