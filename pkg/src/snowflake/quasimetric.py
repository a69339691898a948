"""Closed-form snowflake activation distance and numeric metric-axiom checks."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

EXHAUSTIVE_LIMIT = 64
MONTE_CARLO_TRIPLES = 100_000


@dataclass(frozen=True)
class SnowflakeParams:
    """Coefficients of the snowflake activation.

    The distance is ``(c1 (1 - exp(-gamma t)) + c2 t**alpha + c3 log(1+t)**beta) ** (1+p)``
    evaluated at ``t = ||x - y||``.
    """

    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    p: float = 0.0

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) < 0:
            raise ValueError("coefficients c1, c2, c3 must be non-negative")
        if self.c1 == self.c2 == self.c3 == 0:
            raise ValueError("coefficients c1, c2, c3 must not all be zero")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 <= self.beta <= 1:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.gamma < 0 or self.p < 0:
            raise ValueError("gamma and p must be non-negative")

    @property
    def triangle_constant(self) -> float:
        """Relaxation constant of the triangle inequality, ``2**p``."""
        return relaxed_triangle_constant(1.0 + self.p)


def relaxed_triangle_constant(exponent: float) -> float:
    """Constant C such that ``d**exponent`` obeys ``d(x,y) <= C (d(x,z) + d(z,y))``.

    For a metric ``d`` raised to ``q >= 1`` this is ``2**(q-1)``; for ``q <= 1``
    the power is again a metric and C = 1.
    """
    return float(2.0 ** max(exponent - 1.0, 0.0))


def snowflake_profile(t, params: SnowflakeParams):
    """The snowflake activation as a function of the norm gap ``t >= 0``."""
    t = np.asarray(t, dtype=float)
    # 0**beta with beta=0 would be 1; the irregular term must vanish at t=0.
    log_term = np.where(t > 0, np.log1p(t) ** params.beta, 0.0)
    frac_term = np.where(t > 0, t ** params.alpha, 0.0)
    base = (params.c1 * -np.expm1(-params.gamma * t)
            + params.c2 * frac_term
            + params.c3 * log_term)
    return base ** (1.0 + params.p)


def snowflake_distance(x, y, params: SnowflakeParams) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(snowflake_profile(np.linalg.norm(x - y), params))


@dataclass
class QuasiMetricReport:
    max_triangle_ratio: float
    symmetry_defect: float
    identity_defect: float
    implied_C: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "QuasiMetricReport":
        return cls(**json.loads(text))


def pairwise_matrix(distance: Callable, points: Sequence) -> np.ndarray:
    """Evaluate a black-box distance on every ordered pair of points."""
    n = len(points)
    D = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            D[i, j] = distance(points[i], points[j])
    return D


def check_quasimetric(distance: Callable, points: Sequence, tolerance: float = 1e-12,
                      rng: np.random.Generator | None = None) -> QuasiMetricReport:
    """Measure how far ``distance`` is from a (quasi-)metric on ``points``.

    All defects are relative to the largest pairwise distance in the sample.
    Triangle ratios are exhaustive over all triples when ``len(points) <= 64``
    and use 10**5 random triples otherwise.
    """
    points = list(points)
    n = len(points)
    if n < 3:
        raise ValueError("need at least 3 points")
    D = pairwise_matrix(distance, points)
    return report_from_matrix(D, tolerance=tolerance, rng=rng,
                              distinct=_distinct_mask(points))


def _distinct_mask(points) -> np.ndarray:
    P = np.asarray(points, dtype=float).reshape(len(points), -1)
    return np.any(P[:, None, :] != P[None, :, :], axis=-1)


def report_from_matrix(D: np.ndarray, tolerance: float = 1e-12,
                       rng: np.random.Generator | None = None,
                       distinct: np.ndarray | None = None) -> QuasiMetricReport:
    """Same as :func:`check_quasimetric` but from a precomputed distance matrix."""
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    scale = float(np.max(np.abs(D))) or 1.0
    if distinct is None:
        distinct = ~np.eye(n, dtype=bool)

    identity = float(np.max(np.abs(np.diag(D)))) / scale
    # distinct points at (numerically) zero distance break indiscernibility outright
    if np.any(distinct & (D <= tolerance * scale)):
        identity = max(identity, 1.0)
    symmetry = float(np.max(np.abs(D - D.T))) / scale

    ratio = _max_triangle_ratio(D, rng)
    return QuasiMetricReport(
        max_triangle_ratio=ratio,
        symmetry_defect=symmetry,
        identity_defect=identity,
        implied_C=max(1.0, ratio),
    )


def _max_triangle_ratio(D: np.ndarray, rng: np.random.Generator | None) -> float:
    n = D.shape[0]
    if n <= EXHAUSTIVE_LIMIT:
        # ratio[x, y, z] = D[x, y] / (D[x, z] + D[z, y])
        num = D[:, :, None]
        den = D[:, None, :] + D.T[None, :, :]
        idx = np.arange(n)
        valid = ((idx[:, None, None] != idx[None, :, None])
                 & (idx[:, None, None] != idx[None, None, :])
                 & (idx[None, :, None] != idx[None, None, :]))
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        x, y, z = rng.integers(0, n, size=(3, MONTE_CARLO_TRIPLES))
        num = D[x, y]
        den = D[x, z] + D[z, y]
        valid = (x != y) & (x != z) & (y != z)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(valid & (den > 0), num / np.where(den > 0, den, 1.0), 0.0)
        blown = valid & (den <= 0) & (num > 0)
    if np.any(blown):
        return math.inf
    return float(np.max(r))


@dataclass
class GeneratorReport:
    """Outcome of a metric-generator check; truthy when every condition holds."""

    vanishes_at_zero: bool
    increasing: bool
    concave: bool
    worst_concavity_gap: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.vanishes_at_zero and self.increasing and self.concave

    def __bool__(self) -> bool:
        return self.passed


def _evaluate(f: Callable, xs: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(f(xs), dtype=float)
        if out.shape == xs.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([float(f(float(v))) for v in xs.ravel()]).reshape(xs.shape)


def check_metric_generator(f: Callable, grid, tolerance: float = 1e-12) -> GeneratorReport:
    """Check that ``f`` vanishes at 0, is strictly increasing and midpoint concave on ``grid``.

    Tolerances scale with ``max(1, max|f|)`` on the grid.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    if grid[0] != 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly ascending and start at 0")
    values = _evaluate(f, grid)
    scale = max(1.0, float(np.max(np.abs(values))))
    tol = tolerance * scale

    report = GeneratorReport(
        vanishes_at_zero=abs(values[0]) <= tol,
        increasing=bool(np.all(np.diff(values) > 0)),
        concave=True,
    )
    iu, ju = np.triu_indices(grid.size, k=2)
    mids = _evaluate(f, 0.5 * (grid[iu] + grid[ju]))
    gap = 0.5 * (values[iu] + values[ju]) - mids
    report.worst_concavity_gap = float(np.max(gap)) if gap.size else 0.0
    report.concave = report.worst_concavity_gap <= tol
    if not report.increasing:
        k = int(np.argmin(np.diff(values)))
        report.notes.append(f"not increasing between {grid[k]} and {grid[k + 1]}")
    return report


@dataclass
class MonotonicityReport:
    passed_orders: list
    failed_orders: list
    worst_violation: float

    @property
    def passed(self) -> bool:
        return not self.failed_orders

    def __bool__(self) -> bool:
        return self.passed


def check_complete_monotonicity(f: Callable, grid, max_order: int = 4,
                                tolerance: float = 1e-10) -> MonotonicityReport:
    """Sign test ``(-1)**n Δ**n f >= 0`` on forward differences up to ``max_order``.

    Forward differences of a smooth function share the sign of the matching
    derivative somewhere in the stencil, so a completely monotone ``f`` must
    pass exactly up to rounding. The allowed rounding slack grows with the
    stencil's coefficient mass ``2**n``.
    """
    grid = np.asarray(grid, dtype=float)
    if not 1 <= max_order <= 4:
        raise ValueError("max_order must be between 1 and 4")
    if grid.size < max_order + 1:
        raise ValueError(f"grid of {grid.size} points is too small for order {max_order}")
    if np.any(grid <= 0):
        raise ValueError("grid must lie strictly inside (0, inf)")
    steps = np.diff(grid)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValueError("grid must be uniformly spaced")

    values = _evaluate(f, grid)
    scale = float(np.max(np.abs(values))) or 1.0
    passed, failed, worst = [], [], 0.0
    diff = values
    for order in range(1, max_order + 1):
        diff = np.diff(diff)
        signed = (-1) ** order * diff
        slack = (tolerance + 4 * 2 ** order * np.finfo(float).eps) * scale
        violation = float(max(0.0, -np.min(signed)))
        worst = max(worst, violation / scale)
        (failed if violation > slack else passed).append(order)
    return MonotonicityReport(passed, failed, worst)


def exhaustive_triples(n: int):
    """All ordered triples of distinct indices below ``n``; reference enumeration for tests."""
    return ((x, y, z) for x, y, z in itertools.permutations(range(n), 3))
