"""Expected batch optimal transport couplings and their flow-matching dynamics.

Subpackages follow the pipeline: deterministic random streams and domain
types (`rng`, `measures`), exact solvers (`assignment`, `atomic_transport`),
semidiscrete duality and reference targets (`semidiscrete`), coupling
samplers and rate estimators (`plan`), target velocity fields (`velocity`),
ODE flows (`flow`), the closed-form two-atom model (`binary`), and the
experiment runner (`experiments`, `cli`).
"""

__version__ = "0.1.0"

from .measures import (AtomCloud, CoupledSample, GaussianSource, PairBatch,
                       TargetMeasure, ValidationError, diam, sep)
from .rng import StreamKey

__all__ = [
    "__version__",
    "AtomCloud",
    "CoupledSample",
    "GaussianSource",
    "PairBatch",
    "TargetMeasure",
    "ValidationError",
    "StreamKey",
    "diam",
    "sep",
]
