"""Exact optimal transport between equal-size uniform empirical measures.

`solve_assignment` is the generic k x k entry point (shortest augmenting
path, Jonker-Volgenant style via scipy). When the targets are atoms of a
cloud, the equivalent capacitated formulation in :mod:`batchot.atomic_transport`
is much faster; both routes are cross-checked against each other and against
a brute-force permutation oracle in the test suite.

Cost convention: `total_cost` is the MEAN matched squared distance
(1/k) sum_i ||x_i - y_{sigma(i)}||^2, i.e. W_2^2 of the two uniform
empirical measures. Output is deterministic: the same input bytes produce
the same permutation. On tied instances (probability zero under an
absolutely continuous source) different solvers may return different
optimal permutations; only costs are contractual there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .measures import AtomCloud, PairBatch, ValidationError

__all__ = [
    "AssignmentResult",
    "solve_assignment",
    "solve_batch",
    "assignment_1d",
    "w2sq_quantile_1d",
    "squared_cost_matrix",
]


@dataclass(frozen=True)
class AssignmentResult:
    """Optimal permutation (0-based: perm[i] = matched target slot) and mean cost."""

    perm: np.ndarray
    total_cost: float

    def __post_init__(self):
        p = np.asarray(self.perm, dtype=np.int64)
        p.setflags(write=False)
        object.__setattr__(self, "perm", p)

    @property
    def k(self) -> int:
        return self.perm.shape[0]


def squared_cost_matrix(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """All-pairs squared Euclidean distances, clipped at 0."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    sq_x = np.einsum("ij,ij->i", xs, xs)
    sq_y = np.einsum("ij,ij->i", ys, ys)
    d2 = sq_x[:, None] + sq_y[None, :] - 2.0 * (xs @ ys.T)
    return np.maximum(d2, 0.0)


def solve_assignment(cost_matrix: np.ndarray) -> AssignmentResult:
    """Globally optimal assignment for a square, finite cost matrix."""
    c = np.asarray(cost_matrix, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
        raise ValidationError("cost matrix must be square with k >= 1")
    if not np.all(np.isfinite(c)):
        raise ValidationError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(c)
    perm = np.empty(c.shape[0], dtype=np.int64)
    perm[rows] = cols
    total = float(c[rows, cols].sum() / c.shape[0])
    return AssignmentResult(perm, total)


def solve_batch(batch: PairBatch, cloud: AtomCloud) -> AssignmentResult:
    """Exact OT for one batch: squared-distance costs to the drawn atoms."""
    if np.any(batch.ys < 0) or np.any(batch.ys >= cloud.m):
        raise ValidationError("batch atom indices out of range for cloud")
    if batch.xs.shape[1] != cloud.dim:
        raise ValidationError("batch dimension does not match cloud")
    c = squared_cost_matrix(batch.xs, cloud.atoms[batch.ys])
    return solve_assignment(c)


def assignment_1d(xs: np.ndarray, ys: np.ndarray) -> AssignmentResult:
    """Monotone rearrangement: i-th order statistic to i-th order statistic."""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.shape != ys.shape:
        raise ValidationError("xs and ys must have equal length")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValidationError("inputs must be finite")
    sx = np.argsort(xs, kind="stable")
    sy = np.argsort(ys, kind="stable")
    perm = np.empty(xs.shape[0], dtype=np.int64)
    perm[sx] = sy
    cost = float(np.mean((xs[sx] - ys[sy]) ** 2))
    return AssignmentResult(perm, cost)


def w2sq_quantile_1d(qf: Callable[[np.ndarray], np.ndarray],
                     qg: Callable[[np.ndarray], np.ndarray],
                     n_nodes: int = 10_000) -> float:
    """Squared 2-Wasserstein distance of two 1D laws from their quantiles.

    Midpoint rule on a uniform grid over (0, 1): the squared distance is the
    L^2 distance between quantile functions.
    """
    if n_nodes < 2:
        raise ValidationError("n_nodes must be >= 2")
    u = (np.arange(n_nodes) + 0.5) / n_nodes
    f = np.asarray(qf(u), dtype=np.float64)
    g = np.asarray(qg(u), dtype=np.float64)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise ValidationError("quantile functions must be finite on interior nodes")
    return float(np.mean((f - g) ** 2))
