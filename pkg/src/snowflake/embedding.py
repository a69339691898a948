"""Training-free embedding oracles.

* :func:`critical_exponent` gives the snowflake power at which every ``I``-point
  metric becomes Euclidean.
* :func:`schoenberg_embed` realizes that embedding by classical MDS and reports
  infeasibility through the centred Gram spectrum.
* :func:`fit_exponential_sum` fits ``sum_i beta_i (1 - exp(-alpha_i t))`` by
  variable projection.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares

from . import graphs
from .quasimetric import relaxed_triangle_constant
from .snowflake_net import forward, identity_config

PSD_TOLERANCE = 1e-8
RANK_TOLERANCE = 1e-10
ALPHA_GRID = (1e-3, 1e3)


def critical_exponent(I: int, is_tree: bool = False) -> float:
    """``log2(1 + 1/(I-1)) / 2``, or ``1/2`` for trees."""
    if I < 2:
        raise ValueError("need at least two nodes")
    if is_tree:
        return 0.5
    return math.log2(1.0 + 1.0 / (I - 1)) / 2.0


@dataclass
class EmbeddingResult:
    coords: np.ndarray
    epsilon: float
    min_eigenvalue: float
    residual: float
    eigenvalues: np.ndarray = field(repr=False, default=None)

    feasible = True

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def __bool__(self) -> bool:
        return True

    def to_dict(self) -> dict:
        return {
            "feasible": True,
            "coords": self.coords.tolist(),
            "epsilon": self.epsilon,
            "min_eigenvalue": self.min_eigenvalue,
            "residual": self.residual,
            "dim": self.dim,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class Infeasible:
    """The snowflaked matrix is not Euclidean; ``min_eigenvalue`` is the violating eigenvalue."""

    epsilon: float
    min_eigenvalue: float
    max_eigenvalue: float

    feasible = False

    def __bool__(self) -> bool:
        return False

    def to_dict(self) -> dict:
        return {"feasible": False, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def centred_gram(d_matrix: np.ndarray, epsilon: float) -> np.ndarray:
    """``-1/2 J S J`` with ``S = d**(2 epsilon)`` and ``J`` the centring projector."""
    n = d_matrix.shape[0]
    S = d_matrix ** (2.0 * epsilon)
    J = np.eye(n) - np.full((n, n), 1.0 / n)
    G = -0.5 * J @ S @ J
    return 0.5 * (G + G.T)


def schoenberg_embed(d_matrix, epsilon: float):
    """Embed ``d**epsilon`` isometrically into Euclidean space when possible.

    Returns an :class:`EmbeddingResult`, or :class:`Infeasible` when the centred
    Gram matrix has an eigenvalue below ``-1e-8 * lambda_max``.
    """
    d = np.asarray(d_matrix, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distance matrix must be square")
    if np.any(d < 0):
        raise ValueError("distance matrix has negative entries")
    scale = float(np.max(d)) or 1.0
    if np.max(np.abs(d - d.T)) > 1e-12 * scale:
        raise ValueError("distance matrix is not symmetric")
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")

    G = centred_gram(d, epsilon)
    evals, evecs = np.linalg.eigh(G)
    lam_max = float(evals[-1])
    lam_min = float(evals[0])
    if lam_max <= 0:
        # all points coincide
        coords = np.zeros((d.shape[0], 0))
        return EmbeddingResult(coords, epsilon, lam_min, 0.0, evals)
    if lam_min < -PSD_TOLERANCE * lam_max:
        return Infeasible(epsilon, lam_min, lam_max)

    keep = evals > RANK_TOLERANCE * lam_max
    coords = evecs[:, keep] * np.sqrt(evals[keep])
    coords = coords[:, ::-1]
    target = d ** epsilon
    got = graphs.pairwise_euclidean(coords)
    off = ~np.eye(d.shape[0], dtype=bool) & (target > 0)
    residual = float(np.max(np.abs(got[off] - target[off]) / target[off])) if np.any(off) else 0.0
    return EmbeddingResult(coords, epsilon, lam_min, residual, evals)


@dataclass
class UniversalityReport:
    n_nodes: int
    epsilon: float
    feasible: bool
    embedding_dim: int
    residual: float
    distortion: tuple
    triangle_constant: float
    min_eigenvalue: float

    @property
    def exact(self) -> bool:
        s, L = self.distortion
        return self.feasible and abs(s - 1.0) <= 1e-6 and abs(L - 1.0) <= 1e-6

    def to_dict(self) -> dict:
        out = asdict(self)
        out["distortion"] = list(self.distortion)
        out["exact"] = self.exact
        return out


def verify_snowflake_universality(graph: graphs.WeightedGraph, is_tree: bool = False) -> UniversalityReport:
    """Embed the ``epsilon*``-snowflake of the geodesic metric and undo it with ``f(t) = t**(1/epsilon)``.

    The power map is evaluated through a one-layer neural snowflake, so the
    returned distortion measures ``f(||phi(u) - phi(v)||)`` against ``d_G``.
    """
    D = graphs.geodesic_distances(graph)
    n = D.shape[0]
    eps = critical_exponent(max(n, 2), is_tree)
    result = schoenberg_embed(D, eps)
    constant = relaxed_triangle_constant(1.0 / eps)
    if not result:
        return UniversalityReport(n, eps, False, 0, math.inf, (math.nan, math.nan),
                                  constant, result.min_eigenvalue)
    f = identity_config(p=1.0 / eps - 1.0)
    reconstructed = forward(f, graphs.pairwise_euclidean(result.coords))
    return UniversalityReport(
        n_nodes=n,
        epsilon=eps,
        feasible=True,
        embedding_dim=result.dim,
        residual=result.residual,
        distortion=graphs.distortion(reconstructed, D),
        triangle_constant=constant,
        min_eigenvalue=result.min_eigenvalue,
    )


# exponential sums -------------------------------------------------------

@dataclass
class ExponentialSum:
    """``Y(t) = sum_i beta_i (1 - exp(-alpha_i t))``, which vanishes at 0."""

    alphas: np.ndarray
    betas: np.ndarray
    residual: float = 0.0

    @property
    def M(self) -> int:
        return len(self.alphas)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = _basis(t.reshape(-1), self.alphas) @ self.betas
        return out.reshape(t.shape) if t.ndim else float(out[0])


def _basis(ts: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    return -np.expm1(-np.outer(ts, alphas))


def _project(log_alphas, ts, ys):
    alphas = np.exp(log_alphas)
    Phi = _basis(ts, alphas)
    betas, *_ = np.linalg.lstsq(Phi, ys, rcond=None)
    return betas, Phi @ betas - ys


def fit_exponential_sum(ts, ys, M: int, n_grid: int = 7) -> ExponentialSum:
    """Least-squares exponential sum through ``(ts, ys)``.

    The linear coefficients are eliminated (variable projection) and the decay
    rates are searched in log space from multiple starts on a log grid over
    ``[1e-3, 1e3]``. Fits with ``M`` terms are warm-started from the best
    ``M - 1`` term fit, so the residual never grows with ``M``.
    """
    ts = np.asarray(ts, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if ts.size < 2 or ts.size != ys.size:
        raise ValueError("need at least two (t, y) pairs of equal length")
    if M < 1:
        raise ValueError("M must be at least 1")
    if np.any(ts < 0) or np.any(np.diff(ts) <= 0):
        raise ValueError("ts must be sorted, distinct and non-negative")

    grid = np.linspace(math.log(ALPHA_GRID[0]), math.log(ALPHA_GRID[1]), n_grid)
    starts = [np.array(c) for c in itertools.combinations(grid, M)] if M <= n_grid else []
    if not starts:
        starts = [np.linspace(grid[0], grid[-1], M)]
    if M > 1:
        prev = fit_exponential_sum(ts, ys, M - 1, n_grid)
        for extra in grid:
            starts.append(np.append(np.log(prev.alphas), extra))

    best = None
    lo, hi = math.log(ALPHA_GRID[0]) - 5, math.log(ALPHA_GRID[1]) + 5
    for x0 in starts:
        x0 = np.clip(x0, lo + 1e-9, hi - 1e-9)
        sol = least_squares(lambda la: _project(la, ts, ys)[1], x0, bounds=(lo, hi),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        betas, r = _project(sol.x, ts, ys)
        err = float(np.max(np.abs(r))) if r.size else 0.0
        if best is None or err < best[0]:
            best = (err, sol.x, betas)
    err, la, betas = best
    # the warm start must not lose to the multi-start search
    if M > 1 and err > prev.residual:
        la = np.append(np.log(prev.alphas), grid[0])
        betas = np.append(prev.betas, 0.0)
        err = prev.residual
    order = np.argsort(la)
    return ExponentialSum(np.exp(la[order]), np.asarray(betas)[order], err)
