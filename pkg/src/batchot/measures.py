"""Domain types: atom clouds, target measures, Gaussian sources, batches.

The source is always the standard Gaussian N(0, I_d); the target is a finite
cloud of pairwise-distinct atoms with probability weights (uniform by
default). A :class:`PairBatch` is one empirical OT instance: k source points
and k drawn atom indices.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import StreamKey, categorical, gaussian

__all__ = [
    "ValidationError",
    "AtomCloud",
    "TargetMeasure",
    "GaussianSource",
    "PairBatch",
    "CoupledSample",
    "sep",
    "diam",
    "sample_batch",
    "load_cloud",
    "save_cloud",
]


class ValidationError(ValueError):
    """Invalid domain input (bad shapes, non-finite data, broken invariants)."""


def _pairwise_sq_dists(a: np.ndarray) -> np.ndarray:
    g = a @ a.T
    sq = np.diag(g)
    d2 = sq[:, None] + sq[None, :] - 2.0 * g
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


@dataclass(frozen=True)
class AtomCloud:
    """Finite target support {v_1, ..., v_M} in R^d.

    Atoms must be pairwise distinct under exact coordinate comparison;
    near-duplicates are the caller's responsibility.
    """

    atoms: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(np.atleast_2d(np.asarray(self.atoms, dtype=np.float64)))
        if a.ndim != 2 or a.shape[0] < 1:
            raise ValidationError("atoms must be a (M, d) array with M >= 1")
        if not np.all(np.isfinite(a)):
            raise ValidationError("atoms must be finite")
        if a.shape[0] > 1:
            view = {tuple(row) for row in a}
            if len(view) != a.shape[0]:
                raise ValidationError("atoms must be pairwise distinct")
        a.setflags(write=False)
        object.__setattr__(self, "atoms", a)

    @property
    def m(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]


def sep(cloud: AtomCloud) -> float:
    """Minimum pairwise distance between atoms. Requires M >= 2."""
    if cloud.m < 2:
        raise ValidationError("separation undefined for singleton cloud")
    d2 = _pairwise_sq_dists(cloud.atoms)
    iu = np.triu_indices(cloud.m, k=1)
    return float(np.sqrt(d2[iu].min()))


def diam(cloud: AtomCloud) -> float:
    """Maximum pairwise distance between atoms; 0 for a singleton."""
    if cloud.m == 1:
        return 0.0
    d2 = _pairwise_sq_dists(cloud.atoms)
    return float(np.sqrt(d2.max()))


@dataclass(frozen=True)
class TargetMeasure:
    """Weighted discrete target measure on an atom cloud.

    Weights default to uniform and must sum to 1 within 1e-12.
    """

    cloud: AtomCloud
    weights: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.weights is None:
            w = np.full(self.cloud.m, 1.0 / self.cloud.m)
        else:
            w = np.asarray(self.weights, dtype=np.float64).copy()
        if w.shape != (self.cloud.m,):
            raise ValidationError("weights must have one entry per atom")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("weights must sum to 1 within 1e-12")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.cloud.m, atol=1e-12))


@dataclass(frozen=True)
class GaussianSource:
    """The standard Gaussian N(0, I_d); no free parameters."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError("dim must be >= 1")


@dataclass(frozen=True)
class PairBatch:
    """k source points and k target atom indices: one empirical OT instance."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.ascontiguousarray(np.asarray(self.xs, dtype=np.float64))
        ys = np.ascontiguousarray(np.asarray(self.ys, dtype=np.int64))
        if xs.ndim != 2 or ys.ndim != 1 or xs.shape[0] != ys.shape[0] or xs.shape[0] < 1:
            raise ValidationError("batch needs matching xs (k, d) and ys (k,) with k >= 1")
        if not np.all(np.isfinite(xs)):
            raise ValidationError("xs must be finite")
        xs.setflags(write=False)
        ys.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def k(self) -> int:
        return self.xs.shape[0]


@dataclass(frozen=True)
class CoupledSample:
    """One (x, atom index) draw from the expected batch OT coupling.

    `batch_id` and `slot` (1-based) identify the originating batch and the
    matched source position, so batch-level error bars stay computable.
    """

    x: np.ndarray
    y_index: int
    batch_id: int
    slot: int


def sample_batch(source: GaussianSource, target: TargetMeasure, k: int, key: StreamKey) -> PairBatch:
    """Draw one batch: k i.i.d. Gaussian sources and k i.i.d. target indices.

    Sub-streams: path ...,0 feeds the Gaussians, ...,1 the categoricals.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    xs = gaussian(key.child(0), k, source.dim)
    ys = categorical(key.child(1), target.weights, k)
    return PairBatch(xs, ys)


def load_cloud(atom_path: str | Path, weight_path: str | Path | None = None) -> TargetMeasure:
    """Load a target from plain-text tables.

    One atom per line, whitespace-separated coordinates; the optional weight
    file holds one weight per line.
    """
    atoms = np.loadtxt(atom_path, dtype=np.float64, ndmin=2)
    cloud = AtomCloud(atoms)
    weights = None
    if weight_path is not None:
        weights = np.loadtxt(weight_path, dtype=np.float64, ndmin=1)
    return TargetMeasure(cloud, weights)


def save_cloud(target: TargetMeasure, atom_path: str | Path, weight_path: str | Path | None = None) -> None:
    """Write a target in the plain-text format read by :func:`load_cloud`."""
    np.savetxt(atom_path, target.cloud.atoms)
    if weight_path is not None:
        np.savetxt(weight_path, target.weights)
