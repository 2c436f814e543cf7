"""Deterministic random streams keyed by (master seed, path).

Every random draw in this package goes through a :class:`StreamKey`. A key
addresses one logical stream; distinct paths under the same master seed give
statistically independent streams, and the same key always reproduces the
same bits.

Frozen conventions (golden tests depend on these):

* Generator state is ``numpy.random.Philox`` seeded through
  ``numpy.random.SeedSequence(master_seed, spawn_key=path)``. Philox is a
  counter-based generator, so the raw bit stream is fixed by the key.
* Uniforms are built from raw 64-bit draws as ``(raw >> 11 + 0.5) * 2**-53``,
  which lies strictly inside (0, 1).
* Gaussians use the inverse-CDF transform ``ndtri(uniform)`` (no ziggurat, no
  Box-Muller), so they are a fixed function of the uniform stream.
* Categorical draws use a single uniform and inverse-CDF search on the
  cumulative weight vector; a draw exactly on a cumulative boundary resolves
  to the lower index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

__all__ = ["StreamKey", "uniform", "gaussian", "categorical"]

_U64_SCALE = 2.0**-53


@dataclass(frozen=True)
class StreamKey:
    """Address of one deterministic random stream.

    Parameters
    ----------
    master_seed : int
        64-bit master seed shared by a whole experiment.
    path : tuple of int
        Stream path, e.g. (experiment id, replica id, sub-draw id).
    """

    master_seed: int
    path: tuple[int, ...] = field(default=())

    def child(self, *ids: int) -> "StreamKey":
        """Key of the sub-stream obtained by appending `ids` to the path."""
        return StreamKey(self.master_seed, self.path + tuple(ids))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.master_seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


def uniform(key: StreamKey, n: int) -> np.ndarray:
    """`n` i.i.d. uniforms in the open interval (0, 1)."""
    raw = key.generator().integers(0, 2**64, size=n, dtype=np.uint64)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U64_SCALE


def gaussian(key: StreamKey, n: int, dim: int = 1) -> np.ndarray:
    """(n, dim) array of i.i.d. standard Gaussians via inverse CDF."""
    u = uniform(key, n * dim)
    return ndtri(u).reshape(n, dim)


def categorical(key: StreamKey, weights: np.ndarray, n: int) -> np.ndarray:
    """`n` i.i.d. category indices with the given probability weights.

    One uniform per draw, inverse CDF on the cumulative weights. Boundary
    ties go to the lower index.
    """
    w = np.asarray(weights, dtype=np.float64)
    cum = np.cumsum(w)
    cum[-1] = 1.0  # guard against rounding in the last bin
    u = uniform(key, n)
    return np.searchsorted(cum, u, side="left").astype(np.int64)
