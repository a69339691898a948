"""Named verification suites with machine-readable pass/fail checks.

Each suite returns a list of :class:`Check`. ``metric-axioms``,
``thm1-universality`` and ``gradients`` take seconds; ``stability`` trains
small models and takes minutes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import embedding, graphs, latent_graph, quasimetric
from . import snowflake_net as sn
from .mlp import init_mlp, mlp_backward, mlp_forward
from .trainer import MODEL_KINDS, ExperimentConfig, PairModel, pair_loss, run_experiment

FD_STEP = 1e-6
GRADIENT_TOLERANCE = 1e-5


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    value: float
    threshold: float
    detail: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ helpers

def random_snowflake(rng: np.random.Generator, chain=None, p: float | None = None,
                     skip_weight: float | None = None) -> sn.NeuralSnowflake:
    """Well-scaled random network: signed raw weights with magnitudes in ``[0.1, 1]``.

    Keeping magnitudes away from zero keeps every ``|w|`` differentiable under a
    finite-difference step.
    """
    if chain is None:
        chain = [1] + [int(v) for v in rng.integers(1, 5, size=rng.integers(1, 3))] + [1]

    def draw(shape):
        return rng.uniform(0.1, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)

    layers = []
    for d_prev, d_next in zip(chain[:-1], chain[1:]):
        h = int(rng.integers(1, 5))
        layers.append(sn.SnowflakeLayer(draw((h, d_prev)), draw((d_next, h)), draw(3)))
    if p is None:
        p = float(rng.uniform(0.1, 0.6) * rng.choice([-1.0, 1.0]))
    if skip_weight is None:
        skip_weight = float(rng.uniform(0.1, 0.9))
    return sn.NeuralSnowflake(layers, p=p, skip_weight=skip_weight)


def relative_error(analytic, numeric) -> float:
    """``max|a - n| / max(max|a|, max|n|)`` over a whole gradient, 0 when both vanish."""
    a = np.concatenate([np.ravel(v) for v in analytic])
    n = np.concatenate([np.ravel(v) for v in numeric])
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(n), initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - n)) / scale)


def central_differences(loss_fn, params: dict, step: float = FD_STEP) -> dict:
    """Numerical gradient of ``loss_fn()`` with respect to every entry of ``params``.

    The arrays in ``params`` are perturbed in place and restored.
    """
    out = {}
    for key, arr in params.items():
        grad = np.zeros(arr.shape)
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = loss_fn()
            flat[idx] = orig - step
            down = loss_fn()
            flat[idx] = orig
            grad.reshape(-1)[idx] = (up - down) / (2.0 * step)
        out[key] = grad
    return out


def monotone_trending(trace, window: int = 5) -> bool:
    """Finite, last value below the first, and negative least-squares slope over ``window`` epochs."""
    y = np.asarray(trace[:window], dtype=float)
    if y.size < 2 or not np.all(np.isfinite(y)):
        return False
    slope = np.polyfit(np.arange(y.size), y, 1)[0]
    return bool(y[-1] < y[0] and slope < 0)


# ----------------------------------------------------------- metric axioms

def suite_metric_axioms(n_nets: int = 100, n_points: int = 30, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    checks = []
    worst = {0.0: 0.0, 1.0: 0.0}
    for k in range(n_nets):
        skip = 0.0 if k % 2 == 0 else 0.5
        pts = rng.uniform(-1.0, 1.0, size=(n_points, 3))
        r = graphs.pairwise_euclidean(pts)
        for p in (0.0, 1.0):
            net = random_snowflake(rng, p=p * rng.choice([-1.0, 1.0]), skip_weight=skip)
            rep = quasimetric.report_from_matrix(sn.forward(net, r))
            worst[p] = max(worst[p], rep.implied_C, rep.symmetry_defect + 1.0, rep.identity_defect + 1.0)
    checks.append(Check("metric-axioms", "neural snowflake p=0 is a metric", worst[0.0] <= 1 + 1e-9,
                        worst[0.0], 1 + 1e-9, {"networks": n_nets, "points": n_points}))
    checks.append(Check("metric-axioms", "neural snowflake |p|=1 has C <= 2", worst[1.0] <= 2 + 1e-9,
                        worst[1.0], 2 + 1e-9, {"networks": n_nets, "points": n_points}))

    grid = np.linspace(0.0, 10.0, 401)
    gap = 0.0
    ok = True
    for _ in range(20):
        params = quasimetric.SnowflakeParams(*rng.uniform(0.1, 2.0, size=3), *rng.uniform(0.05, 1.0, size=2),
                                             float(rng.uniform(0.1, 3.0)), 0.0)
        rep = quasimetric.check_metric_generator(lambda t: quasimetric.snowflake_profile(t, params), grid)
        ok &= rep.passed
        gap = max(gap, rep.worst_concavity_gap)
    checks.append(Check("metric-axioms", "snowflake activation p=0 is a metric generator", ok, gap, 0.0))
    return checks


# ------------------------------------------------------------- universality

def suite_thm1_universality(n_graphs: int = 100, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    worst_dev, feasible, exact = 0.0, 0, 0
    named = [("five-node", graphs.five_node_graph())]
    randoms = [(f"random{k}", graphs.random_connected_graph(int(rng.integers(3, 9)), rng))
               for k in range(n_graphs)]
    for _, g in named + randoms:
        rep = embedding.verify_snowflake_universality(g)
        feasible += rep.feasible
        exact += rep.exact
        if rep.feasible:
            s, L = rep.distortion
            worst_dev = max(worst_dev, abs(s - 1.0), abs(L - 1.0))
        else:
            worst_dev = math.inf
    total = len(named) + len(randoms)
    checks = [
        Check("thm1-universality", "critical-exponent snowflake is Euclidean", feasible == total,
              float(feasible), float(total), {"graphs": total}),
        Check("thm1-universality", "reconstructed distortion is (1, 1)", exact == total and worst_dev <= 1e-6,
              worst_dev, 1e-6, {"graphs": total}),
    ]
    cyc = embedding.schoenberg_embed(graphs.geodesic_distances(graphs.cycle_graph(4)), 1.0)
    bad = (not cyc) and cyc.min_eigenvalue < -embedding.PSD_TOLERANCE * cyc.max_eigenvalue
    checks.append(Check("thm1-universality", "unit 4-cycle at epsilon 1 is infeasible", bool(bad),
                        float(cyc.min_eigenvalue), -embedding.PSD_TOLERANCE * float(getattr(cyc, "max_eigenvalue", 0.0))))
    return checks


# ---------------------------------------------------------------- gradients

def _snowflake_instance(rng):
    net = random_snowflake(rng)
    t = rng.uniform(0.1, 10.0, size=20)
    up = rng.standard_normal(20)
    g = sn.backward(net, t, upstream=up)
    analytic = dict(sn.gradient_dict(g), p=np.array([g.d_p]), skip=np.array([g.d_skip]),
                    t=np.asarray(g.d_input))
    params = dict(net.parameters(), p=np.array([net.p]), skip=np.array([net.skip_weight]), t=t)

    def loss():
        net.p = float(params["p"][0])
        net.skip_weight = float(params["skip"][0])
        return float(np.dot(up, sn.forward(net, params["t"])))

    numeric = central_differences(loss, params)
    return relative_error([analytic[k] for k in params], [numeric[k] for k in params])


def _mlp_instance(rng):
    sizes = [int(rng.integers(2, 7))] + [int(v) for v in rng.integers(2, 9, size=rng.integers(1, 4))] \
        + [int(rng.integers(1, 4))]
    net = init_mlp(sizes, seed=int(rng.integers(0, 2**31)))
    X = rng.standard_normal((4, sizes[0]))
    up = rng.standard_normal((4, sizes[-1]))
    g = mlp_backward(net, X, up)
    analytic = dict(g.as_dict(), x=g.d_input)
    params = dict(net.parameters(), x=X)
    numeric = central_differences(lambda: float(np.sum(up * mlp_forward(net, params["x"]))), params)
    return relative_error([analytic[k] for k in params], [numeric[k] for k in params])


def _pair_loss_instance(rng, kind):
    D = int(rng.integers(2, 6))
    encoder = init_mlp([D, 6, 5, 2], seed=int(rng.integers(0, 2**31))) if kind != "snowflake_direct" else None
    snow = random_snowflake(rng) if kind != "mlp_only" else None
    model = PairModel(kind, encoder, snow, train_skip=snow is not None)
    x, y = rng.uniform(-1, 1, size=D), rng.uniform(-1, 1, size=D)
    target = float(rng.uniform(0.1, 2.0))
    _, main, pg = pair_loss(model, x, y, target)
    params = model.main_parameters()
    params.update(model.p_parameters())
    analytic = {**main, **pg}

    def loss():
        model.load_main(params)
        model.load_p(params)
        return pair_loss(model, x, y, target)[0]

    numeric = central_differences(loss, params)
    return relative_error([analytic[k] for k in params], [numeric[k] for k in params])


def _graph_loss_instance(rng):
    n = int(rng.integers(3, 9))
    k = int(rng.integers(1, n))
    layers = int(rng.integers(1, 3))
    delta = rng.uniform(-1, 1, size=n)
    logps = [-rng.uniform(0.1, 5.0, size=(n, n)) for _ in range(layers)]
    edges = [latent_graph.sample_edges(lp, k, rng.uniform(0.01, 0.99, size=(n, n))) for lp in logps]
    _, grads = latent_graph.graph_learning_loss(delta, edges, logps)
    params = {f"L{i}": lp for i, lp in enumerate(logps)}
    numeric = central_differences(lambda: latent_graph.graph_learning_loss(delta, edges, logps)[0], params)
    return relative_error(grads, [numeric[f"L{i}"] for i in range(layers)])


def suite_gradients(n_instances: int = 50, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    cases = {
        "snowflake_net": lambda: _snowflake_instance(rng),
        "mlp_encoder": lambda: _mlp_instance(rng),
        "pair_loss": lambda: max(_pair_loss_instance(rng, kind) for kind in MODEL_KINDS),
        "graph_learning_loss": lambda: _graph_loss_instance(rng),
    }
    checks = []
    for name, fn in cases.items():
        worst = max(fn() for _ in range(n_instances))
        checks.append(Check("gradients", f"{name} matches central differences", worst < GRADIENT_TOLERANCE,
                            worst, GRADIENT_TOLERANCE, {"instances": n_instances, "step": FD_STEP}))
    return checks


# ---------------------------------------------------------------- stability

def stability_table2(seeds=range(20), metric_ids=graphs.METRIC_IDS, kinds=MODEL_KINDS,
                     train_pairs: int = 20_000, test_pairs: int = 2_000, epochs: int = 5,
                     min_passing: int = 18) -> list:
    checks = []
    seeds = list(seeds)
    for metric_id in metric_ids:
        for kind in kinds:
            finite = trending = 0
            for s in seeds:
                cfg = ExperimentConfig(metric_id=metric_id, model_kind=kind, train_pairs=train_pairs,
                                       test_pairs=test_pairs, epochs=epochs, seed=s)
                trace = run_experiment(cfg).loss_trace
                finite += bool(np.all(np.isfinite(trace)))
                trending += monotone_trending(trace)
            ok = finite == len(seeds) and trending >= min_passing
            checks.append(Check("stability", f"{metric_id}/{kind}", ok, float(trending), float(min_passing),
                                {"finite": finite, "seeds": len(seeds)}))
    return checks


def stability_latent_graph(seeds=range(20), spaces=latent_graph.SIMILARITY_SPACES, epochs: int = 5,
                           min_passing: int = 18) -> list:
    checks = []
    seeds = list(seeds)
    for space in spaces:
        cfg = latent_graph.LatentGraphConfig(similarity_space=space, epochs=epochs, seeds=seeds)
        finite = trending = 0
        for s in seeds:
            res = latent_graph.run_split(cfg, s)
            finite += bool(np.all(np.isfinite(res.loss_trace)) and np.all(np.isfinite(res.gl_trace)))
            trending += monotone_trending(res.loss_trace)
        ok = finite == len(seeds) and trending >= min_passing
        checks.append(Check("stability", f"latent-graph/{space}", ok, float(trending), float(min_passing),
                            {"finite": finite, "seeds": len(seeds)}))
    return checks


def suite_stability(seeds=range(20)) -> list:
    return stability_table2(seeds) + stability_latent_graph(seeds)


SUITES = {
    "metric-axioms": suite_metric_axioms,
    "thm1-universality": suite_thm1_universality,
    "gradients": suite_gradients,
    "stability": suite_stability,
}


def run_suite(name: str) -> list:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}")
    return SUITES[name]()
