"""Flow-matching target velocity fields for Gaussian-to-discrete couplings.

Velocity fields point from the current state z toward the posterior mean of
the final atom: u_t(z) = (sum_j p_j(t, z) v_j - z) / (1 - t). For the
independent coupling the posterior is a closed-form softmax. For the batch
coupling it is assembled from assignment probabilities evaluated at the M
pulled-back points x_j = (z - t v_j)/(1 - t): p_j proportional to
phi(x_j) * abar_j(x_j), where abar_j(x) is the probability that the batch
plan matches source point x to atom j.

abar is estimated by Monte Carlo over R common random batches: a
:class:`BatchContext` pre-draws R pools of (k-1) Gaussian sources and k
atom draws, solves each pool once, and then answers per-point matching
queries exactly via shortest augmenting paths (see
:mod:`batchot.atomic_transport`). One context may be shared across query
points, time steps and trajectories; sharing granularity is a caller
choice and is what "common random batches" means here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import atomic_transport as engine
from .binary import BinomTailTable, binary_mean, binom_tail_table
from .measures import (AtomCloud, GaussianSource, TargetMeasure,
                       ValidationError)
from .rng import StreamKey, categorical, gaussian

__all__ = [
    "posterior_independent",
    "posterior_independent_many",
    "velocity_from_posterior",
    "concentration_bound",
    "BatchContext",
    "assignment_freq_mc",
    "posterior_batch_mc",
    "posterior_batch_mc_many",
    "posterior_batch_mc_blocks",
    "posterior_max_expectation",
    "IndependentVelocity",
    "BatchMCVelocity",
    "BinaryClosedFormVelocity",
]


def _check_t(t: float) -> None:
    if not 0.0 <= t < 1.0:
        raise ValidationError("t must lie in [0, 1)")


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def posterior_independent_many(t: float, zs: np.ndarray, cloud: AtomCloud,
                               weights: np.ndarray) -> np.ndarray:
    """(B, M) posterior atom probabilities under the independent coupling.

    p_j proportional to w_j * exp(-||z - t v_j||^2 / (2 (1-t)^2)), computed
    with max-subtraction.
    """
    _check_t(t)
    zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
    atoms = cloud.atoms
    d2 = (np.einsum("ij,ij->i", zs, zs)[:, None]
          - 2.0 * t * zs @ atoms.T
          + t * t * np.einsum("ij,ij->i", atoms, atoms)[None, :])
    logits = np.log(np.asarray(weights)) - d2 / (2.0 * (1.0 - t) ** 2)
    return _softmax(logits)


def posterior_independent(t: float, z: np.ndarray, cloud: AtomCloud,
                          weights: np.ndarray) -> np.ndarray:
    """(M,) posterior at a single point."""
    return posterior_independent_many(t, np.asarray(z, dtype=np.float64)[None, :],
                                      cloud, weights)[0]


def velocity_from_posterior(t: float, z: np.ndarray, probs: np.ndarray,
                            cloud: AtomCloud) -> np.ndarray:
    """u = (posterior mean - z) / (1 - t); the mean lies in the atom hull."""
    _check_t(t)
    m = np.asarray(probs, dtype=np.float64) @ cloud.atoms
    return (m - np.asarray(z, dtype=np.float64)) / (1.0 - t)


def concentration_bound(t: float, m: int, sep_val: float) -> float:
    """Analytic bound on 1 - E[max_j posterior] for the independent coupling:
    (M - 1) exp(-t^2 sep^2 / (8 (1-t)^2))."""
    _check_t(t)
    if m < 2 or sep_val <= 0:
        raise ValidationError("need M >= 2 and sep > 0")
    s = t / (1.0 - t)
    return float((m - 1) * np.exp(-(s * sep_val) ** 2 / 8.0))


class BatchContext:
    """R common random batches condensed for exact matching queries.

    Each replica holds k-1 pool sources and k atom draws; querying a point
    x returns the atom matched to x in the exact OT solution of the k-point
    batch {x} + pool. The query point always plays the extra slot, which by
    exchangeability loses no generality.
    """

    def __init__(self, target: TargetMeasure, k: int, r_batches: int, key: StreamKey,
                 source_dim: int | None = None):
        if k < 1 or r_batches < 1:
            raise ValidationError("k and r_batches must be >= 1")
        self.target = target
        self.k = k
        self.r = r_batches
        self.key = key
        d = target.cloud.dim if source_dim is None else source_dim
        if d != target.cloud.dim:
            raise ValidationError("source dimension must match the cloud")
        m = target.cloud.m
        ys = categorical(key.child(1), target.weights, r_batches * k).reshape(r_batches, k)
        caps = np.zeros((r_batches, m), dtype=np.int64)
        for ir in range(r_batches):
            caps[ir] = np.bincount(ys[ir], minlength=m)
        if k > 1:
            pool = gaussian(key.child(0), r_batches * (k - 1), d).reshape(r_batches, k - 1, d)
            atoms = target.cloud.atoms
            flat = pool.reshape(-1, d)
            d2 = (np.einsum("ij,ij->i", flat, flat)[:, None]
                  - 2.0 * flat @ atoms.T
                  + np.einsum("ij,ij->i", atoms, atoms)[None, :])
            costs = np.maximum(d2, 0.0).reshape(r_batches, k - 1, m)
        else:
            costs = np.zeros((r_batches, 0, m), dtype=np.float64)
        self.v, self.w, self.free, self.cap_pos = engine.build_pool_contexts(costs, caps)
        self._atom_sq = np.einsum("ij,ij->i", target.cloud.atoms, target.cloud.atoms)

    @property
    def cloud(self) -> AtomCloud:
        return self.target.cloud

    def _query_costs(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d2 = (np.einsum("ij,ij->i", pts, pts)[:, None]
              - 2.0 * pts @ self.cloud.atoms.T
              + self._atom_sq[None, :])
        return np.maximum(d2, 0.0)

    def matched_counts(self, points: np.ndarray) -> np.ndarray:
        """(Q, M) counts of matched atoms over the R replicas."""
        return engine.query_freqs(self._query_costs(points), self.v, self.w,
                                  self.free, self.cap_pos)

    def matched_atoms(self, points: np.ndarray) -> np.ndarray:
        """(Q, R) matched atom per query point and replica."""
        return engine.query_atoms(self._query_costs(points), self.v, self.w,
                                  self.free, self.cap_pos)

    def hit_freqs(self, points: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """(Q,) frequency with which point q is matched to atom cols[q]."""
        counts = engine.query_hit_counts(self._query_costs(points),
                                         np.asarray(cols, dtype=np.int64),
                                         self.v, self.w, self.free, self.cap_pos)
        return counts / float(self.r)


def assignment_freq_mc(x: np.ndarray, cloud: AtomCloud, weights: np.ndarray,
                       k: int, r_batches: int, key: StreamKey,
                       ctx: BatchContext | None = None) -> np.ndarray:
    """(M,) Monte Carlo estimate of the batch assignment probabilities at x.

    Component j estimates the probability that the exact batch plan matches
    source point x to atom j, over R random batches. Pass `ctx` to reuse a
    common batch pool across queries.
    """
    if ctx is None:
        ctx = BatchContext(TargetMeasure(cloud, weights), k, r_batches, key)
    counts = ctx.matched_counts(np.asarray(x, dtype=np.float64)[None, :])
    return counts[0] / float(ctx.r)


def _pullback(t: float, zs: np.ndarray, atoms: np.ndarray):
    """Pulled-back points x_j(z) = (z - t v_j)/(1 - t) and their sq norms."""
    zs = np.atleast_2d(zs)
    x = (zs[:, None, :] - t * atoms[None, :, :]) / (1.0 - t)
    sq = np.einsum("bjd,bjd->bj", x, x)
    return x, sq


def posterior_batch_mc_many(t: float, zs: np.ndarray, ctx: BatchContext) -> np.ndarray:
    """(B, M) batch-coupling posterior at many points via the MC context.

    Assembled in log space: log w_j = -||x_j||^2/2 + log abar_j(x_j) with
    abar floored at 1/(10 M R) so a zero frequency cannot produce -inf (the
    true abar_j is at least M^-k, so the floor only affects values below
    Monte Carlo resolution).
    """
    _check_t(t)
    zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
    b = zs.shape[0]
    m = ctx.cloud.m
    x, sq = _pullback(t, zs, ctx.cloud.atoms)
    cols = np.tile(np.arange(m, dtype=np.int64), b)
    freqs = ctx.hit_freqs(x.reshape(b * m, -1), cols).reshape(b, m)
    floor = 1.0 / (10.0 * m * ctx.r)
    log_w = -0.5 * sq + np.log(np.maximum(freqs, floor))
    return _softmax(log_w)


def posterior_batch_mc(t: float, z: np.ndarray, ctx: BatchContext) -> np.ndarray:
    """(M,) batch-coupling posterior at a single point."""
    return posterior_batch_mc_many(t, np.asarray(z, dtype=np.float64)[None, :], ctx)[0]


def posterior_batch_mc_blocks(t: float, z: np.ndarray, ctx: BatchContext,
                              n_blocks: int = 40):
    """Posterior with replica-block standard errors.

    Splits the R replicas into contiguous blocks, forms one posterior per
    block, and returns (block mean, stderr over blocks) per atom.
    """
    _check_t(t)
    if ctx.r < 2 * n_blocks:
        raise ValidationError("too few replicas for the requested block count")
    z = np.asarray(z, dtype=np.float64)[None, :]
    m = ctx.cloud.m
    x, sq = _pullback(t, z, ctx.cloud.atoms)
    atoms_qr = ctx.matched_atoms(x.reshape(m, -1))  # (M, R)
    per = ctx.r // n_blocks
    probs = np.empty((n_blocks, m), dtype=np.float64)
    floor_block = 1.0 / (10.0 * m * per)
    for ib in range(n_blocks):
        sl = atoms_qr[:, ib * per:(ib + 1) * per]
        freqs = np.array([(sl[j] == j).mean() for j in range(m)])
        log_w = -0.5 * sq[0] + np.log(np.maximum(freqs, floor_block))
        probs[ib] = _softmax(log_w)
    return probs.mean(axis=0), probs.std(axis=0, ddof=1) / np.sqrt(n_blocks)


def posterior_max_expectation(target: TargetMeasure, coupling_k: int, t: float,
                              n_traj: int, key: StreamKey,
                              ctx: BatchContext | None = None,
                              r_batches: int = 2000) -> tuple[float, float]:
    """E[max_j P(X_1 = v_j | X_t)] under the coupling, with stderr.

    Draws (X_0, X_1) from the batch coupling of size `coupling_k`, forms
    X_t, and evaluates the posterior: closed form for k = 1, Monte Carlo
    (batch context) otherwise.
    """
    from .plan import sample_plan_arrays  # local import to avoid a cycle

    _check_t(t)
    source = GaussianSource(target.cloud.dim)
    xs, y_idx, _, _ = sample_plan_arrays(source, target, coupling_k, n_traj, key.child(0))
    zt = (1.0 - t) * xs + t * target.cloud.atoms[y_idx]
    if coupling_k == 1:
        probs = posterior_independent_many(t, zt, target.cloud, target.weights)
    else:
        if ctx is None:
            ctx = BatchContext(target, coupling_k, r_batches, key.child(1))
        probs = posterior_batch_mc_many(t, zt, ctx)
    mx = probs.max(axis=1)
    return float(mx.mean()), float(mx.std(ddof=1) / np.sqrt(n_traj))


@dataclass
class IndependentVelocity:
    """Closed-form target velocity of the independent coupling."""

    target: TargetMeasure

    def velocity(self, t: float, zs: np.ndarray) -> np.ndarray:
        probs = posterior_independent_many(t, zs, self.target.cloud, self.target.weights)
        m = probs @ self.target.cloud.atoms
        return (m - np.atleast_2d(zs)) / (1.0 - t)

    @property
    def dim(self) -> int:
        return self.target.cloud.dim


@dataclass
class BatchMCVelocity:
    """Monte Carlo target velocity of the batch-k coupling.

    Holds one immutable common-batch context; evaluations are read-only and
    deterministic given the context.
    """

    ctx: BatchContext

    @classmethod
    def build(cls, target: TargetMeasure, k: int, r_batches: int,
              key: StreamKey) -> "BatchMCVelocity":
        return cls(BatchContext(target, k, r_batches, key))

    def velocity(self, t: float, zs: np.ndarray) -> np.ndarray:
        probs = posterior_batch_mc_many(t, zs, self.ctx)
        m = probs @ self.ctx.cloud.atoms
        return (m - np.atleast_2d(zs)) / (1.0 - t)

    @property
    def dim(self) -> int:
        return self.ctx.cloud.dim


@dataclass
class BinaryClosedFormVelocity:
    """Exact batch-k velocity for the 1D two-atom target {-1, +1}."""

    k: int
    table: BinomTailTable = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.table is None:
            self.table = binom_tail_table(self.k)

    def velocity(self, t: float, zs: np.ndarray) -> np.ndarray:
        zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
        m = binary_mean(t, zs[:, 0], self.k, self.table)
        return (np.asarray(m)[:, None] - zs) / (1.0 - t)

    @property
    def dim(self) -> int:
        return 1
