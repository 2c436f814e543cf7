"""ODE integration of velocity models: Euler iterates, RK2 reference,
terminal maps, integration-error estimation, and 2D cell rasters.

The explicit Euler scheme follows the iterates x <- x + (1/n) u_{j/n}(x),
j = 0..n-1: the last velocity evaluation sits at t = (n-1)/n < 1, so a
horizon of exactly 1 is reachable with fields defined on [0, 1). The RK2
reference is the midpoint rule with the half-step time capped below 1.

Terminal maps integrate a second-order reference to t = 1 - 1/(4 n) and
snap to the nearest atom; snaps farther than sep/2 are flagged undecided
but still reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import AtomCloud, ValidationError, sep
from .rng import StreamKey, gaussian

__all__ = [
    "IntegratorSpec",
    "TerminalAssignment",
    "integrate",
    "integrate_many",
    "terminal_map",
    "terminal_map_many",
    "estimate_error_nk",
    "estimate_error_grid",
    "cell_raster",
    "raster_nodes",
]

_SCHEMES = ("euler", "rk2_midpoint")
_T_CAP = 1.0 - 1e-9


@dataclass(frozen=True)
class IntegratorSpec:
    """Uniform-step integrator description.

    t_end = 1 with the Euler scheme lands on the terminal time through the
    final finite evaluation at t = (n-1)/n.
    """

    scheme: str
    n_steps: int
    t_end: float = 1.0

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise ValidationError(f"scheme must be one of {_SCHEMES}")
        if self.n_steps < 1:
            raise ValidationError("n_steps must be >= 1")
        if not 0.0 < self.t_end <= 1.0:
            raise ValidationError("t_end must lie in (0, 1]")

    @property
    def n_evals(self) -> int:
        return self.n_steps * (2 if self.scheme == "rk2_midpoint" else 1)


@dataclass(frozen=True)
class TerminalAssignment:
    """Snapped endpoint of one reference trajectory."""

    x0: np.ndarray
    atom: int
    snapped_distance: float
    undecided: bool


def integrate_many(model, x0: np.ndarray, spec: IntegratorSpec) -> np.ndarray:
    """Integrate a batch of initial points; returns the terminal states."""
    x = np.atleast_2d(np.asarray(x0, dtype=np.float64)).copy()
    n = spec.n_steps
    h = spec.t_end / n
    if spec.scheme == "euler":
        for j in range(n):
            x += h * model.velocity(j * h, x)
    else:
        for j in range(n):
            t = j * h
            k1 = model.velocity(t, x)
            k2 = model.velocity(min(t + 0.5 * h, _T_CAP), x + 0.5 * h * k1)
            x += h * k2
    return x


def integrate(model, x0: np.ndarray, spec: IntegratorSpec) -> np.ndarray:
    """Integrate a single initial point."""
    return integrate_many(model, np.asarray(x0, dtype=np.float64)[None, :], spec)[0]


def _check_reference(spec_ref: IntegratorSpec) -> None:
    if spec_ref.scheme != "rk2_midpoint" or spec_ref.n_steps < 50:
        raise ValidationError("terminal maps require an rk2_midpoint reference with n >= 50")


def terminal_map_many(model, x0: np.ndarray, spec_ref: IntegratorSpec, cloud: AtomCloud):
    """Terminal atoms for a batch of initial points.

    Returns (atoms (B,), snap distances (B,), undecided flags (B,)). The
    reference runs to 1 - 1/(4 n) regardless of spec_ref.t_end.
    """
    _check_reference(spec_ref)
    t_end = 1.0 - 1.0 / (4.0 * spec_ref.n_steps)
    spec = IntegratorSpec(spec_ref.scheme, spec_ref.n_steps, t_end)
    xt = integrate_many(model, x0, spec)
    d2 = (np.einsum("ij,ij->i", xt, xt)[:, None]
          - 2.0 * xt @ cloud.atoms.T
          + np.einsum("ij,ij->i", cloud.atoms, cloud.atoms)[None, :])
    atoms = np.argmin(d2, axis=1)
    snap = np.sqrt(np.maximum(d2[np.arange(xt.shape[0]), atoms], 0.0))
    threshold = sep(cloud) / 2.0 if cloud.m > 1 else np.inf
    return atoms.astype(np.int64), snap, snap > threshold


def terminal_map(model, x0: np.ndarray, spec_ref: IntegratorSpec,
                 cloud: AtomCloud) -> TerminalAssignment:
    x0 = np.asarray(x0, dtype=np.float64)
    atoms, snap, und = terminal_map_many(model, x0[None, :], spec_ref, cloud)
    return TerminalAssignment(x0=x0, atom=int(atoms[0]),
                              snapped_distance=float(snap[0]),
                              undecided=bool(und[0]))


def estimate_error_grid(model, ns, n_samples: int, spec_ref: IntegratorSpec,
                        key: StreamKey):
    """Euler-vs-reference endpoint errors for several step counts at once.

    The reference trajectory and the Gaussian initial points are shared
    across the step-count grid. Returns (means, stderrs) arrays aligned
    with ns; the stderr is over sampled initial conditions.
    """
    ns = [int(n) for n in ns]
    if min(ns) < 1 or n_samples < 2:
        raise ValidationError("need n >= 1 and n_samples >= 2")
    x0 = gaussian(key, n_samples, model.dim)
    ref = integrate_many(model, x0, spec_ref)
    means = np.empty(len(ns))
    stderrs = np.empty(len(ns))
    for i, n in enumerate(ns):
        end = integrate_many(model, x0, IntegratorSpec("euler", n, 1.0))
        err = np.sqrt(np.sum((end - ref) ** 2, axis=1))
        means[i] = err.mean()
        stderrs[i] = err.std(ddof=1) / np.sqrt(n_samples)
    return means, stderrs


def estimate_error_nk(model, n: int, n_samples: int, spec_ref: IntegratorSpec,
                      key: StreamKey) -> tuple[float, float]:
    """Mean Euler endpoint error against the RK2 reference, with stderr."""
    means, stderrs = estimate_error_grid(model, [n], n_samples, spec_ref, key)
    return float(means[0]), float(stderrs[0])


def raster_nodes(rect: tuple[float, float, float, float], resolution: int) -> np.ndarray:
    """(resolution^2, 2) grid nodes of the rectangle, row-major in y then x."""
    xmin, xmax, ymin, ymax = rect
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def cell_raster(model, rect: tuple[float, float, float, float], resolution: int,
                spec_ref: IntegratorSpec, cloud: AtomCloud):
    """Terminal atom of every grid node of a 2D rectangle.

    Returns (atom matrix, undecided matrix), each (resolution, resolution).
    """
    if cloud.dim != 2:
        raise ValidationError("cell rasters are defined for d = 2")
    nodes = raster_nodes(rect, resolution)
    atoms, _, und = terminal_map_many(model, nodes, spec_ref, cloud)
    return (atoms.reshape(resolution, resolution),
            und.reshape(resolution, resolution))
