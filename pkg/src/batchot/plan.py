"""Samplers and estimators for the expected batch OT coupling.

The coupling of batch size k is sampled by drawing independent batches,
solving each exactly, and emitting all k matched pairs of every batch: by
exchangeability each emitted pair is marginally distributed as one
uniformly selected pair, and the batch average is exactly the inner
conditional expectation, so this is the lower-variance estimator. Batch
provenance is kept so every standard error here is computed over
batch-level (or block-level) averages, never over pooled pairs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import atomic_transport as engine
from .measures import (CoupledSample, GaussianSource, TargetMeasure,
                       ValidationError, diam, sep)
from .rng import StreamKey, categorical, gaussian, uniform
from .semidiscrete import ReferenceTarget, nn_indices

__all__ = [
    "CostEstimate",
    "BiasEstimate",
    "GridCostResult",
    "sample_plan",
    "sample_plan_arrays",
    "estimate_cost",
    "estimate_cost_grid",
    "estimate_bias",
    "estimate_plan_gap_upper",
    "cost_to_plan_lower",
    "cost_to_plan_upper_constant",
    "rank_coupling_msq",
    "rate_k_grid",
    "fit_loglog_slope",
]

_MAX_CHUNK_PAIRS = 1 << 15


def target_fingerprint(target: TargetMeasure) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(target.cloud.atoms).tobytes())
    h.update(np.ascontiguousarray(target.weights).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class CostEstimate:
    """Mean exact batch OT cost at batch size k, with its standard error."""

    k: int
    mean: float
    stderr: float
    n_batches: int
    total_pairs: int
    fingerprint: str = ""


@dataclass(frozen=True)
class BiasEstimate:
    """Excess of the batch cost over the reference optimal cost."""

    k: int
    bias: float
    stderr: float
    reference_w2sq: float


@dataclass(frozen=True)
class GridCostResult:
    """Common-random-number cost sweep over a k grid.

    block_costs[b, i] is block b's average batch cost at ks[i]; all entries
    of one row are computed from the same underlying pair draws, so paired
    differences across k are meaningful. block_gaps is the matching
    per-block mean of ||v_matched - v_nn(x)||^2 when a reference was given.
    """

    ks: tuple
    block_costs: np.ndarray
    block_gaps: np.ndarray | None
    batches_per_block: np.ndarray
    fingerprint: str

    def cost_estimate(self, i: int) -> CostEstimate:
        col = self.block_costs[:, i]
        n_blocks = col.shape[0]
        nb = int(self.batches_per_block[i]) * n_blocks
        return CostEstimate(
            k=int(self.ks[i]),
            mean=float(col.mean()),
            stderr=float(col.std(ddof=1) / np.sqrt(n_blocks)),
            n_batches=nb,
            total_pairs=nb * int(self.ks[i]),
            fingerprint=self.fingerprint,
        )

    def gap_estimate(self, i: int) -> tuple[float, float]:
        if self.block_gaps is None:
            raise ValidationError("grid was computed without a reference target")
        col = self.block_gaps[:, i]
        return float(col.mean()), float(col.std(ddof=1) / np.sqrt(col.shape[0]))

    def paired_diff(self, i: int, j: int) -> tuple[float, float]:
        """Mean and stderr of block-level cost differences ks[j] minus ks[i]."""
        d = self.block_costs[:, j] - self.block_costs[:, i]
        return float(d.mean()), float(d.std(ddof=1) / np.sqrt(d.shape[0]))


def _solve_batches(xs: np.ndarray, ys: np.ndarray, target: TargetMeasure, k: int):
    """Solve n_b batches given pooled draws xs (n_b*k, d), ys (n_b*k,)."""
    n_b = xs.shape[0] // k
    m = target.cloud.m
    atoms = target.cloud.atoms
    d2 = (np.einsum("ij,ij->i", xs, xs)[:, None]
          - 2.0 * xs @ atoms.T
          + np.einsum("ij,ij->i", atoms, atoms)[None, :])
    costs = np.maximum(d2, 0.0).reshape(n_b, k, m)
    caps = np.zeros((n_b, m), dtype=np.int64)
    ys2 = ys.reshape(n_b, k)
    for b in range(n_b):
        caps[b] = np.bincount(ys2[b], minlength=m)
    assigns, totals = engine.solve_transport_batch(costs, caps)
    return assigns, totals / k


def sample_plan_arrays(source: GaussianSource, target: TargetMeasure, k: int,
                       n_pairs: int, key: StreamKey):
    """Structure-of-arrays form of :func:`sample_plan`.

    Returns (xs (n, d), y_idx (n,), batch_ids (n,), slots (n,)) with slots
    1-based. Batches are drawn in chunks with per-chunk derived keys and a
    fixed reduction order.
    """
    if k < 1 or n_pairs < 1:
        raise ValidationError("k and n_pairs must be >= 1")
    n_batches = (n_pairs + k - 1) // k
    per_chunk = max(1, _MAX_CHUNK_PAIRS // k)
    xs_out, y_out, bid_out, slot_out = [], [], [], []
    b0 = 0
    chunk = 0
    while b0 < n_batches:
        nb = min(per_chunk, n_batches - b0)
        ck = key.child(chunk)
        xs = gaussian(ck.child(0), nb * k, source.dim)
        ys = categorical(ck.child(1), target.weights, nb * k)
        assigns, _ = _solve_batches(xs, ys, target, k)
        xs_out.append(xs)
        y_out.append(assigns.ravel())
        bid_out.append(np.repeat(np.arange(b0, b0 + nb), k))
        slot_out.append(np.tile(np.arange(1, k + 1), nb))
        b0 += nb
        chunk += 1
    xs = np.concatenate(xs_out)[:n_pairs]
    y_idx = np.concatenate(y_out)[:n_pairs]
    bids = np.concatenate(bid_out)[:n_pairs]
    slots = np.concatenate(slot_out)[:n_pairs]
    return xs, y_idx, bids, slots


def sample_plan(source: GaussianSource, target: TargetMeasure, k: int,
                n_pairs: int, key: StreamKey) -> list[CoupledSample]:
    """n_pairs draws from the expected batch OT coupling at batch size k."""
    xs, y_idx, bids, slots = sample_plan_arrays(source, target, k, n_pairs, key)
    return [CoupledSample(x=xs[i], y_index=int(y_idx[i]),
                          batch_id=int(bids[i]), slot=int(slots[i]))
            for i in range(n_pairs)]


def estimate_cost(source: GaussianSource, target: TargetMeasure, k: int,
                  n_batches: int, key: StreamKey) -> CostEstimate:
    """Mean and stderr of the exact batch OT cost over independent batches."""
    if n_batches < 2:
        raise ValidationError("n_batches must be >= 2")
    per_chunk = max(1, _MAX_CHUNK_PAIRS // k)
    costs = np.empty(n_batches, dtype=np.float64)
    b0 = 0
    chunk = 0
    while b0 < n_batches:
        nb = min(per_chunk, n_batches - b0)
        ck = key.child(chunk)
        xs = gaussian(ck.child(0), nb * k, source.dim)
        ys = categorical(ck.child(1), target.weights, nb * k)
        _, per_batch = _solve_batches(xs, ys, target, k)
        costs[b0:b0 + nb] = per_batch
        b0 += nb
        chunk += 1
    return CostEstimate(
        k=k,
        mean=float(costs.mean()),
        stderr=float(costs.std(ddof=1) / np.sqrt(n_batches)),
        n_batches=n_batches,
        total_pairs=n_batches * k,
        fingerprint=target_fingerprint(target),
    )


def estimate_cost_grid(source: GaussianSource, target: TargetMeasure, ks,
                       pair_budget: int, key: StreamKey,
                       ref: ReferenceTarget | None = None,
                       control_variate: bool = True) -> GridCostResult:
    """Cost (and optionally plan-gap) sweep over a k grid with common draws.

    The pair budget is split into blocks of max(ks) pairs. Within one block
    the same pairs feed every k: size-k batches consume the leading
    floor(max_k / k) * k draws, so per-k batch counts track budget / k and
    adjacent-k differences are positively coupled for the monotonicity
    check. Block-level averages are the stderr sample unit.

    With control_variate=True the exactly-centered squared-norm terms
    (mean ||x||^2 - d and mean ||v_y||^2 - target second moment) are
    subtracted per batch. The matched cost splits into these
    permutation-independent terms plus the cross term, so the adjustment is
    unbiased and removes their sampling noise.
    """
    ks = tuple(int(k) for k in ks)
    if len(ks) == 0 or min(ks) < 1:
        raise ValidationError("ks must be a nonempty list of positive ints")
    k_max = max(ks)
    n_blocks = max(2, pair_budget // k_max)
    block_costs = np.empty((n_blocks, len(ks)), dtype=np.float64)
    block_gaps = np.empty((n_blocks, len(ks)), dtype=np.float64) if ref is not None else None
    if ref is not None and target_fingerprint(ref.target) != target_fingerprint(target):
        raise ValidationError("reference target does not match the sampled target")
    atoms = target.cloud.atoms
    atom_sq = np.einsum("ij,ij->i", atoms, atoms)
    msq = float(np.dot(target.weights, atom_sq))
    for b in range(n_blocks):
        ck = key.child(b)
        xs = gaussian(ck.child(0), k_max, source.dim)
        ys = categorical(ck.child(1), target.weights, k_max)
        if ref is not None:
            nn_atom = atoms[nn_indices(xs, target.cloud)]
        for i, k in enumerate(ks):
            nb = k_max // k
            n_use = nb * k
            assigns, per_batch = _solve_batches(xs[:n_use], ys[:n_use], target, k)
            if control_variate:
                x_sq = np.einsum("ij,ij->i", xs[:n_use], xs[:n_use]).reshape(nb, k).mean(axis=1)
                y_sq = atom_sq[ys[:n_use]].reshape(nb, k).mean(axis=1)
                per_batch = per_batch - (x_sq - source.dim) - (y_sq - msq)
            block_costs[b, i] = per_batch.mean()
            if ref is not None:
                matched = atoms[assigns.ravel()]
                gaps = np.sum((matched - nn_atom[:n_use]) ** 2, axis=1)
                block_gaps[b, i] = gaps.mean()
    return GridCostResult(
        ks=ks,
        block_costs=block_costs,
        block_gaps=block_gaps,
        batches_per_block=np.array([k_max // k for k in ks], dtype=np.int64),
        fingerprint=target_fingerprint(target),
    )


def estimate_bias(cost: CostEstimate, ref: ReferenceTarget) -> BiasEstimate:
    """Signed bias of the batch cost against the reference optimal cost.

    The reference w2sq enters as a constant, so the stderr is the cost's;
    the reference's own Monte Carlo error is a common offset across k.
    """
    if cost.fingerprint and cost.fingerprint != target_fingerprint(ref.target):
        raise ValidationError("cost estimate and reference use different targets")
    return BiasEstimate(
        k=cost.k,
        bias=cost.mean - ref.w2sq,
        stderr=cost.stderr,
        reference_w2sq=ref.w2sq,
    )


def estimate_plan_gap_upper(source: GaussianSource, target: TargetMeasure,
                            ref: ReferenceTarget, k: int, n_pairs: int,
                            key: StreamKey) -> tuple[float, float]:
    """Monte Carlo E||Y - T*(X)||^2 under the batch coupling, with stderr.

    T* is the nearest-atom map of the reference construction. The mean is
    over coupling draws; the stderr is over batch-level averages.
    """
    if target_fingerprint(ref.target) != target_fingerprint(target):
        raise ValidationError("reference target does not match the sampled target")
    xs, y_idx, bids, _ = sample_plan_arrays(source, target, k, n_pairs, key)
    atoms = target.cloud.atoms
    gaps = np.sum((atoms[y_idx] - atoms[nn_indices(xs, target.cloud)]) ** 2, axis=1)
    n_full = (n_pairs // k) * k
    if n_full >= 2 * k:
        per_batch = gaps[:n_full].reshape(-1, k).mean(axis=1)
        stderr = float(per_batch.std(ddof=1) / np.sqrt(per_batch.shape[0]))
    else:
        stderr = float(gaps.std(ddof=1) / np.sqrt(gaps.shape[0]))
    return float(gaps.mean()), stderr


def cost_to_plan_lower(cost_mean: float, w2: float) -> float:
    """Lower bound (1/2)(sqrt(cost) - w2)^2 on W_2^2(plan, optimal plan)."""
    if cost_mean < 0 or w2 < 0:
        raise ValidationError("cost_mean and w2 must be nonnegative")
    root = np.sqrt(cost_mean)
    if root <= w2:  # sampling noise can push the estimate below the optimum
        return 0.0
    return 0.5 * (root - w2) ** 2


def cost_to_plan_upper_constant(cloud) -> float:
    """Constant A in W_2^2(plan, optimal) <= A * sqrt(excess cost).

    A = 2 diam^2 sqrt(M(M-1) / (2 sqrt(2 pi) sep)).
    """
    if cloud.m < 2:
        raise ValidationError("upper-bound constant requires at least two atoms")
    m = cloud.m
    return float(2.0 * diam(cloud) ** 2
                 * np.sqrt(m * (m - 1) / (2.0 * np.sqrt(2.0 * np.pi) * sep(cloud))))


def rank_coupling_msq(k: int, n_mc: int, key: StreamKey) -> tuple[float, float, float]:
    """Mean squared gap of same-rank order statistics of two uniform samples.

    Returns (analytic, mc, stderr): the analytic value is 1/(3(k+1)); the
    Monte Carlo estimate sorts two independent uniform k-samples and picks a
    uniform common rank.
    """
    if k < 1 or n_mc < 2:
        raise ValidationError("need k >= 1 and n_mc >= 2")
    analytic = 1.0 / (3.0 * (k + 1))
    chunk = max(1, _MAX_CHUNK_PAIRS // k)
    vals = np.empty(n_mc, dtype=np.float64)
    done = 0
    c = 0
    while done < n_mc:
        n = min(chunk, n_mc - done)
        ck = key.child(c)
        u = np.sort(uniform(ck.child(0), n * k).reshape(n, k), axis=1)
        v = np.sort(uniform(ck.child(1), n * k).reshape(n, k), axis=1)
        idx = (uniform(ck.child(2), n) * k).astype(np.int64).clip(0, k - 1)
        r = np.arange(n)
        vals[done:done + n] = (u[r, idx] - v[r, idx]) ** 2
        done += n
        c += 1
    return analytic, float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_mc))


def rate_k_grid(j_min: int = 2, j_max: int = 24) -> list[int]:
    """Half-power-of-two grid floor(2^(j/2)) for j in [j_min, j_max], deduplicated."""
    ks = sorted({int(np.floor(2.0 ** (j / 2.0))) for j in range(j_min, j_max + 1)})
    return ks


def fit_loglog_slope(ks, values, upper_half: bool = True,
                     stderrs=None, sigma_filter: float = 3.0) -> float:
    """OLS slope of log(values) against log(ks).

    With upper_half=True only the upper half of the grid enters the fit
    (the asymptotic regime; the finite-sample regime is slower). When
    stderrs are given, points whose value is not resolved at
    sigma_filter standard errors are dropped before the upper-half cut:
    the log of a noise-dominated estimate carries no rate information.
    """
    ks = np.asarray(ks, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if stderrs is not None:
        keep = values > sigma_filter * np.asarray(stderrs, dtype=np.float64)
        ks, values = ks[keep], values[keep]
    if len(ks) < 2:
        raise ValidationError("slope fit needs at least two resolved points")
    if np.any(values <= 0):
        raise ValidationError("slope fit requires positive values")
    if upper_half:
        lo = len(ks) // 2
        ks, values = ks[lo:], values[lo:]
    lx = np.log(ks)
    ly = np.log(values)
    lx = lx - lx.mean()
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))
