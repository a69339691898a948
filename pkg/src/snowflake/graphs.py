"""Weighted graphs, geodesic distances, distortion and the synthetic distance targets."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

METRIC_IDS = ("M1", "M2", "M3", "M4", "M5", "M6")

METRIC_FORMULAS = {
    "M1": "s^0.5 log(1+s)^0.5",
    "M2": "s^0.1 log(1+s)^0.9",
    "M3": "1 - 1/(1+s^0.5)",
    "M4": "1 - exp(-(s-1)/log s)",
    "M5": "1 - 1/(1+s)^0.2",
    "M6": "1 - 1/(1+s^0.2+s^0.5)",
}


class DisconnectedGraphError(ValueError):
    pass


@dataclass
class WeightedGraph:
    """Undirected graph with strictly positive edge weights.

    ``coords`` is optional node geometry (``n x D``); ``n_nodes`` is taken from it
    when not given explicitly.
    """

    edges: list
    weights: list
    n_nodes: int | None = None
    coords: np.ndarray | None = None
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.edges = [tuple(int(v) for v in e) for e in self.edges]
        self.weights = [float(w) for w in self.weights]
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=float)
        if self.n_nodes is None:
            if self.coords is not None:
                self.n_nodes = len(self.coords)
            else:
                self.n_nodes = 1 + max((max(e) for e in self.edges), default=-1)
        if len(self.edges) != len(self.weights):
            raise ValueError("one weight per edge required")
        for (i, j), w in zip(self.edges, self.weights):
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not 0 <= i < self.n_nodes or not 0 <= j < self.n_nodes:
                raise ValueError(f"edge ({i}, {j}) references a missing node")
            if not w > 0:
                raise ValueError(f"edge ({i}, {j}) has non-positive weight {w}")

    @classmethod
    def from_labelled_edges(cls, pairs, weights=None) -> "WeightedGraph":
        """Build from edges over hashable labels, e.g. ``[("A", "E"), ...]``."""
        labels = []
        for pair in pairs:
            for v in pair:
                if v not in labels:
                    labels.append(v)
        labels.sort()
        index = {v: k for k, v in enumerate(labels)}
        edges = [(index[a], index[b]) for a, b in pairs]
        weights = [1.0] * len(edges) if weights is None else weights
        return cls(edges, weights, n_nodes=len(labels), labels=labels)

    def adjacency(self) -> csr_matrix:
        rows, cols, vals = [], [], []
        for (i, j), w in zip(self.edges, self.weights):
            rows += [i, j]
            cols += [j, i]
            vals += [w, w]
        # parallel edges: the lighter one wins
        dense = np.full((self.n_nodes, self.n_nodes), np.inf)
        for i, j, w in zip(rows, cols, vals):
            dense[i, j] = min(dense[i, j], w)
        dense[np.isinf(dense)] = 0.0
        return csr_matrix(dense)

    def is_connected(self) -> bool:
        if self.n_nodes <= 1:
            return True
        n_comp, _ = connected_components(self.adjacency(), directed=False)
        return n_comp == 1

    def to_dict(self) -> dict:
        return {
            "coords": None if self.coords is None else self.coords.tolist(),
            "edges": [list(e) for e in self.edges],
            "weights": self.weights,
            "n_nodes": self.n_nodes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WeightedGraph":
        coords = data.get("coords")
        return cls(
            edges=data["edges"],
            weights=data["weights"],
            n_nodes=data.get("n_nodes"),
            coords=None if coords is None else np.asarray(coords, dtype=float),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "WeightedGraph":
        return cls.from_dict(json.loads(text))


def five_node_graph() -> WeightedGraph:
    """Five-node graph with edges {A,E}, {A,D}, {E,B}, {B,D}, {D,C}; no Riemannian isometric copy exists."""
    return WeightedGraph.from_labelled_edges(
        [("A", "E"), ("A", "D"), ("E", "B"), ("B", "D"), ("D", "C")])


def cycle_graph(n: int, weight: float = 1.0) -> WeightedGraph:
    return WeightedGraph([(i, (i + 1) % n) for i in range(n)], [weight] * n, n_nodes=n)


def random_connected_graph(n: int, rng: np.random.Generator, extra_edge_prob: float = 0.3,
                           weight_range=(0.1, 10.0)) -> WeightedGraph:
    """Random spanning tree plus Bernoulli extra edges, uniform positive weights."""
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        parent = order[rng.integers(0, k)]
        edges.add(tuple(sorted((int(order[k]), int(parent)))))
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in edges and rng.random() < extra_edge_prob:
                edges.add((i, j))
    edges = sorted(edges)
    weights = rng.uniform(*weight_range, size=len(edges))
    return WeightedGraph(edges, weights.tolist(), n_nodes=n)


def geodesic_distances(g: WeightedGraph) -> np.ndarray:
    """All-pairs shortest-path distances (Dijkstra from every source)."""
    if g.n_nodes == 0:
        return np.zeros((0, 0))
    D = dijkstra(g.adjacency(), directed=False)
    if np.any(np.isinf(D)):
        raise DisconnectedGraphError("graph is disconnected; geodesics are undefined")
    # runs from opposite ends may sum the same path in a different order
    return np.minimum(D, D.T)


def aspect_ratio(d: np.ndarray) -> float:
    """Largest pairwise distance over smallest nonzero one; 1 for fewer than two points."""
    d = np.asarray(d, dtype=float)
    if d.shape[0] <= 1:
        return 1.0
    off = d[~np.eye(d.shape[0], dtype=bool)]
    nonzero = off[off > 0]
    if nonzero.size == 0:
        return 1.0
    return float(nonzero.max() / nonzero.min())


def distortion(embedded: np.ndarray, target: np.ndarray) -> tuple:
    """Bi-Lipschitz constants ``(s, L)``: min and max of embedded/target over distinct pairs."""
    embedded = np.asarray(embedded, dtype=float)
    target = np.asarray(target, dtype=float)
    if embedded.shape != target.shape:
        raise ValueError("matrices must have the same shape")
    mask = ~np.eye(target.shape[0], dtype=bool)
    e, t = embedded[mask], target[mask]
    if np.any((t == 0) & (e != 0)):
        raise ZeroDivisionError("zero target distance with nonzero embedded distance")
    keep = t != 0
    if not np.any(keep):
        return 1.0, 1.0
    ratios = e[keep] / t[keep]
    return float(ratios.min()), float(ratios.max())


def sample_pointcloud(n: int, D: int, seed=None, *, rng: np.random.Generator | None = None) -> np.ndarray:
    """Standard Gaussian coordinates clamped to ``[-1, 1]``."""
    if n < 1 or D < 1:
        raise ValueError("n and D must be positive")
    rng = rng if rng is not None else np.random.default_rng(seed)
    return np.clip(rng.standard_normal((n, D)), -1.0, 1.0)


def synthetic_target(metric_id: str, s):
    """Target distance profile ``M1``..``M6`` evaluated at ``s = ||x - y||``.

    ``M4`` is extended continuously by 0 at ``s = 0`` and ``1 - 1/e`` at ``s = 1``.
    """
    if metric_id not in METRIC_IDS:
        raise ValueError(f"unknown metric id {metric_id!r}; expected one of {METRIC_IDS}")
    scalar = np.ndim(s) == 0
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < 0):
        raise ValueError("s must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        if metric_id == "M1":
            out = np.sqrt(s) * np.sqrt(np.log1p(s))
        elif metric_id == "M2":
            out = s ** 0.1 * np.log1p(s) ** 0.9
        elif metric_id == "M3":
            out = 1.0 - 1.0 / (1.0 + np.sqrt(s))
        elif metric_id == "M4":
            out = _m4(s)
        elif metric_id == "M5":
            out = 1.0 - (1.0 + s) ** -0.2
        else:
            out = 1.0 - 1.0 / (1.0 + s ** 0.2 + np.sqrt(s))
    return float(out[0]) if scalar else out


def _m4(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    zero = s == 0
    near_one = np.abs(s - 1.0) < 1e-6
    rest = ~(zero | near_one)
    out[zero] = 0.0
    # (s-1)/log s = 1 + (s-1)/2 - (s-1)^2/12 + O((s-1)^3) around s = 1
    h = s[near_one] - 1.0
    out[near_one] = -np.expm1(-(1.0 + h / 2.0 - h * h / 12.0))
    out[rest] = -np.expm1(-(s[rest] - 1.0) / np.log(s[rest]))
    return out


def distance_matrix_to_csv(d: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([""] + list(range(d.shape[0])))
    for i, row in enumerate(d):
        writer.writerow([i] + [repr(float(v)) for v in row])
    return buf.getvalue()


def distance_matrix_from_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]])


def pairwise_euclidean(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def has_triangle_inequality(d: np.ndarray, tol: float = 1e-12) -> bool:
    scale = float(np.max(d)) or 1.0
    # d[x, y] <= d[x, z] + d[z, y] for all z
    via = np.min(d[:, None, :] + d.T[None, :, :], axis=-1)
    return bool(np.all(d <= via + tol * scale))

