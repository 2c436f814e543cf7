"""Semidiscrete OT: nearest-neighbor reference targets, dual ascent, Laguerre cells.

The reference construction sidesteps stochastic solvers when an exactly
known W_2^2(mu, nu) is needed: discretize the Gaussian by a large sample,
set each atom's weight to its nearest-neighbor mass, and the NN projection
is then the optimal map for the reference problem, with cost equal to the
mean squared NN distance.

The dual solver maximizes H(lam) = E[min_j ||X - v_j||^2 - lam_j] + sum_j
w_j lam_j over the zero-sum subspace by Robbins-Monro stochastic gradient
ascent with Polyak averaging. Only the output criterion is contractual: the
returned potentials must reproduce the target weights as Laguerre cell
masses within tolerance on a fresh audit sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .measures import (AtomCloud, GaussianSource, TargetMeasure,
                       ValidationError, load_cloud, save_cloud, sep)
from .rng import StreamKey, gaussian

__all__ = [
    "ConvergenceError",
    "DualWeights",
    "ReferenceTarget",
    "nn_index",
    "nn_indices",
    "build_reference_target",
    "laguerre_index",
    "laguerre_indices",
    "eval_dual_H",
    "solve_semidiscrete_dual",
    "estimate_cell_masses",
    "save_reference",
    "load_reference",
]

_BLOCK = 100_000


class ConvergenceError(RuntimeError):
    """Dual solver failed its cell-mass audit; carries the residual."""

    def __init__(self, residual: float, tol: float):
        super().__init__(f"cell-mass residual {residual:.4g} exceeds tolerance {tol:.4g}")
        self.residual = residual
        self.tol = tol


@dataclass(frozen=True)
class DualWeights:
    """Semidiscrete dual potentials, constrained to sum to zero."""

    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.float64).copy()
        if lam.ndim != 1 or not np.all(np.isfinite(lam)):
            raise ValidationError("lam must be a finite vector")
        if abs(lam.sum()) > 1e-10 * max(1.0, np.abs(lam).max()):
            raise ValidationError("dual weights must sum to zero within 1e-10")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @staticmethod
    def project(lam: np.ndarray) -> "DualWeights":
        lam = np.asarray(lam, dtype=np.float64)
        return DualWeights(lam - lam.mean())


@dataclass(frozen=True)
class ReferenceTarget:
    """NN-frequency target with exactly known reference transport cost.

    `w2sq` equals atom_sumsq.sum() / n_ref by construction, the mean squared
    NN distance of the reference sample; `has_zero_weight_atom` flags atoms
    that received no reference mass.
    """

    target: TargetMeasure
    w2sq: float
    n_ref: int
    atom_sumsq: np.ndarray | None = None
    has_zero_weight_atom: bool = False


def nn_indices(points: np.ndarray, cloud: AtomCloud) -> np.ndarray:
    """Nearest-atom index per point; ties break to the lowest index."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d2 = (np.einsum("ij,ij->i", pts, pts)[:, None]
          - 2.0 * pts @ cloud.atoms.T
          + np.einsum("ij,ij->i", cloud.atoms, cloud.atoms)[None, :])
    return np.argmin(d2, axis=1).astype(np.int64)


def nn_index(x: np.ndarray, cloud: AtomCloud) -> int:
    return int(nn_indices(np.asarray(x, dtype=np.float64)[None, :], cloud)[0])


def laguerre_indices(points: np.ndarray, cloud: AtomCloud, dual: DualWeights) -> np.ndarray:
    """argmin_j ||x - v_j||^2 - lam_j per point; ties to the lowest index."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    scores = (np.einsum("ij,ij->i", pts, pts)[:, None]
              - 2.0 * pts @ cloud.atoms.T
              + np.einsum("ij,ij->i", cloud.atoms, cloud.atoms)[None, :]
              - dual.lam[None, :])
    return np.argmin(scores, axis=1).astype(np.int64)


def laguerre_index(x: np.ndarray, cloud: AtomCloud, dual: DualWeights) -> int:
    return int(laguerre_indices(np.asarray(x, dtype=np.float64)[None, :], cloud, dual)[0])


def build_reference_target(cloud: AtomCloud, n_ref: int, key: StreamKey) -> ReferenceTarget:
    """Sample n_ref Gaussians, take NN frequencies as weights and mean
    squared NN distance as the reference W_2^2.

    Streams in blocks of 1e5 samples with per-block derived keys; counts are
    exact integers and the block reduction order is fixed, so the result is
    bit-stable for a given key.
    """
    if n_ref < cloud.m:
        raise ValidationError("n_ref must be at least the number of atoms")
    counts = np.zeros(cloud.m, dtype=np.int64)
    sumsq = np.zeros(cloud.m, dtype=np.float64)
    n_blocks = (n_ref + _BLOCK - 1) // _BLOCK
    done = 0
    for b in range(n_blocks):
        n = min(_BLOCK, n_ref - done)
        pts = gaussian(key.child(b), n, cloud.dim)
        d2 = (np.einsum("ij,ij->i", pts, pts)[:, None]
              - 2.0 * pts @ cloud.atoms.T
              + np.einsum("ij,ij->i", cloud.atoms, cloud.atoms)[None, :])
        idx = np.argmin(d2, axis=1)
        mins = np.maximum(d2[np.arange(n), idx], 0.0)
        counts += np.bincount(idx, minlength=cloud.m)
        sumsq += np.bincount(idx, weights=mins, minlength=cloud.m)
        done += n
    weights = counts / float(n_ref)
    w2sq = float(sumsq.sum() / n_ref)
    return ReferenceTarget(
        target=TargetMeasure(cloud, weights),
        w2sq=w2sq,
        n_ref=n_ref,
        atom_sumsq=sumsq,
        has_zero_weight_atom=bool(np.any(counts == 0)),
    )


def eval_dual_H(dual: DualWeights, target: TargetMeasure, sample: np.ndarray) -> float:
    """Monte Carlo value of the semidiscrete dual objective at `dual`."""
    pts = np.atleast_2d(np.asarray(sample, dtype=np.float64))
    if pts.shape[0] < 1:
        raise ValidationError("sample must be nonempty")
    scores = (np.einsum("ij,ij->i", pts, pts)[:, None]
              - 2.0 * pts @ target.cloud.atoms.T
              + np.einsum("ij,ij->i", target.cloud.atoms, target.cloud.atoms)[None, :]
              - dual.lam[None, :])
    psi = scores.min(axis=1)
    return float(psi.mean() + np.dot(target.weights, dual.lam))


@njit(cache=True)
def _sga_kernel(atoms, weights, xs, step_scale, t0, avg_from):
    m, d = atoms.shape
    steps = xs.shape[0]
    lam = np.zeros(m, dtype=np.float64)
    acc = np.zeros(m, dtype=np.float64)
    n_acc = 0
    for t in range(steps):
        best = 0
        bv = np.inf
        for j in range(m):
            val = -lam[j]
            for c in range(d):
                diff = xs[t, c] - atoms[j, c]
                val += diff * diff
            if val < bv:
                bv = val
                best = j
        gamma = step_scale / np.sqrt(t + t0)
        for j in range(m):
            lam[j] += gamma * weights[j]
        lam[best] -= gamma
        mean = 0.0
        for j in range(m):
            mean += lam[j]
        mean /= m
        for j in range(m):
            lam[j] -= mean
        if t >= avg_from:
            for j in range(m):
                acc[j] += lam[j]
            n_acc += 1
    return acc / n_acc


def estimate_cell_masses(cloud: AtomCloud, dual: DualWeights, n_samples: int,
                         key: StreamKey) -> np.ndarray:
    """Empirical Laguerre cell masses from fresh Gaussian samples."""
    counts = np.zeros(cloud.m, dtype=np.int64)
    done = 0
    b = 0
    while done < n_samples:
        n = min(_BLOCK, n_samples - done)
        pts = gaussian(key.child(b), n, cloud.dim)
        idx = laguerre_indices(pts, cloud, dual)
        counts += np.bincount(idx, minlength=cloud.m)
        done += n
        b += 1
    return counts / float(n_samples)


def solve_semidiscrete_dual(source: GaussianSource, target: TargetMeasure,
                            steps: int, key: StreamKey,
                            step_schedule=None,
                            audit_n: int = 1_000_000,
                            mass_tol: float = 0.01) -> DualWeights:
    """Averaged one-sample stochastic gradient ascent on the dual objective.

    Default step size sep^2 / (4 sqrt(t + 100)); the iterate is projected
    onto the zero-sum subspace after every step and Polyak-averaged over the
    second half. A fresh-sample audit checks the Laguerre cell masses
    against the target weights and raises :class:`ConvergenceError` when the
    worst residual exceeds `mass_tol`.

    `step_schedule`, if given, maps the step index to a step size and
    overrides the default.
    """
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    if np.any(target.weights <= 0):
        raise ValidationError("dual solver requires strictly positive target weights")
    if source.dim != target.cloud.dim:
        raise ValidationError("source and target dimensions differ")
    m = target.cloud.m
    if m == 1:
        return DualWeights(np.zeros(1))

    xs = gaussian(key.child(0), steps, source.dim)
    if step_schedule is None:
        scale = sep(target.cloud) ** 2 / 4.0
        lam = _sga_kernel(target.cloud.atoms, target.weights, xs,
                          scale, 100.0, steps // 2)
    else:
        lam = np.zeros(m)
        acc = np.zeros(m)
        n_acc = 0
        atoms = target.cloud.atoms
        for t in range(steps):
            scores = np.sum((xs[t] - atoms) ** 2, axis=1) - lam
            best = int(np.argmin(scores))
            gamma = float(step_schedule(t))
            lam = lam + gamma * target.weights
            lam[best] -= gamma
            lam -= lam.mean()
            if t >= steps // 2:
                acc += lam
                n_acc += 1
        lam = acc / max(n_acc, 1)

    dual = DualWeights.project(lam)
    masses = estimate_cell_masses(target.cloud, dual, audit_n, key.child(1))
    residual = float(np.abs(masses - target.weights).max())
    if residual > mass_tol:
        raise ConvergenceError(residual, mass_tol)
    return dual


def save_reference(ref: ReferenceTarget, prefix: str | Path) -> None:
    """Persist a reference target as atoms/weights tables plus a meta file."""
    prefix = Path(prefix)
    save_cloud(ref.target, f"{prefix}.atoms.txt", f"{prefix}.weights.txt")
    with open(f"{prefix}.meta.txt", "w", encoding="utf-8") as fh:
        fh.write(f"w2sq = {ref.w2sq!r}\n")
        fh.write(f"n_ref = {ref.n_ref}\n")
        fh.write(f"has_zero_weight_atom = {int(ref.has_zero_weight_atom)}\n")


def load_reference(prefix: str | Path) -> ReferenceTarget:
    prefix = Path(prefix)
    target = load_cloud(f"{prefix}.atoms.txt", f"{prefix}.weights.txt")
    meta: dict[str, str] = {}
    with open(f"{prefix}.meta.txt", encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k.strip()] = v.strip()
    return ReferenceTarget(
        target=target,
        w2sq=float(meta["w2sq"]),
        n_ref=int(meta["n_ref"]),
        atom_sumsq=None,
        has_zero_weight_atom=bool(int(meta.get("has_zero_weight_atom", "0"))),
    )
