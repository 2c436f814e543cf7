"""Experiment configuration: flat key-value text with one section per experiment.

Files use INI-style sections named after experiments. Keys are validated
against the experiment's schema; unknown keys fail fast. A written manifest
is itself a valid config (its [manifest] section is informational), so any
run can be reproduced by pointing the CLI at its manifest.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Any

from .measures import ValidationError

__all__ = ["ExperimentConfig", "SCHEMAS", "EXPERIMENTS", "parse_config", "resolve_config"]


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


# name -> (parser, default)
_COMMON = {
    "master_seed": (int, 20250801),
    "max_solver_calls": (int, 10**12),
}

SCHEMAS: dict[str, dict[str, tuple]] = {
    "rates": {
        **_COMMON,
        "d": (int, 10),
        "n_atoms": (int, 5),
        "atom_box": (float, 1.0),
        "k_j_min": (int, 2),
        "k_j_max": (int, 24),
        "pair_budget": (int, 2**18),
        "n_ref": (int, 10**7),
    },
    "plan1d": {
        **_COMMON,
        "atoms": (_float_list, [-1.5, 1.5]),
        "k_list": (_int_list, [1, 10, 100]),
        "n_pairs": (int, 100_000),
        "n_bins": (int, 40),
        "x_range": (float, 4.0),
        "rank_k_list": (_int_list, [1, 5, 50]),
        "rank_n_mc": (int, 200_000),
    },
    "cells": {
        **_COMMON,
        "n_atoms": (int, 7),
        "atom_box": (float, 1.0),
        "k_list": (_int_list, [1, 25, 1000]),
        "grid_lo": (float, -3.0),
        "grid_hi": (float, 3.0),
        "resolution": (int, 151),
        "r_batches": (int, 2000),
        "ref_steps": (int, 50),
        "dual_steps": (int, 400_000),
        "audit_n": (int, 1_000_000),
        "mass_tol": (float, 0.01),
        "pushforward_samples": (int, 10_000),
    },
    "concentration": {
        **_COMMON,
        "n_atoms": (int, 100),
        "d": (int, 20),
        "atom_box": (float, 1.0),
        "k_list": (_int_list, [1, 4, 16]),
        "d_list": (_int_list, [2, 5, 10, 20, 50]),
        "n_traj": (int, 2000),
        "n_traj_mc": (int, 300),
        "t_points": (int, 100),
        "t_max": (float, 0.99),
        "r_batches": (int, 192),
    },
    "error_grid": {
        **_COMMON,
        "d": (int, 20),
        "n_atoms": (int, 100),
        "atom_box": (float, 1.0),
        "n_list": (_int_list, [1, 2, 4, 8, 16, 32, 64]),
        "k_list": (_int_list, [1, 4, 16, 64]),
        "n_samples": (int, 1000),
        "n_samples_mc": (int, 400),
        "r_batches": (int, 256),
        "ref_steps": (int, 100),
    },
    "binary_asymptotics": {
        **_COMMON,
        "n_list": (_int_list, [1, 2, 4, 8, 16, 32, 64, 128, 256]),
        "one_step_k_max_exp": (int, 14),
        "comp_n_hi": (int, 25),
        "comp_n_lo": (int, 10),
        "comp_k_max": (int, 300),
    },
    "binary_contour": {
        **_COMMON,
        "n_max": (int, 50),
        "k_list": (_int_list, [1, 2, 3, 4, 6, 8, 11, 16, 23, 32, 45, 64, 91, 128, 181, 256, 300]),
    },
}

EXPERIMENTS = tuple(SCHEMAS)


@dataclass
class ExperimentConfig:
    """A fully resolved experiment configuration."""

    experiment: str
    params: dict[str, Any]
    out_dir: str = "out"
    threads: int | None = None
    overrides: dict[str, Any] = field(default_factory=dict)

    @property
    def master_seed(self) -> int:
        return int(self.params["master_seed"])


def parse_config(path: str, experiment: str) -> dict[str, Any]:
    """Read the [experiment] section of a config file against its schema."""
    if experiment not in SCHEMAS:
        raise ValidationError(f"unknown experiment '{experiment}'; choose from {EXPERIMENTS}")
    cp = configparser.ConfigParser(interpolation=None)
    read = cp.read(path)
    if not read:
        raise ValidationError(f"config file not found: {path}")
    schema = SCHEMAS[experiment]
    params = {name: default for name, (_, default) in schema.items()}
    if cp.has_section(experiment):
        for key, raw in cp.items(experiment):
            if key not in schema:
                raise ValidationError(f"unknown key '{key}' in section [{experiment}]")
            parser, _ = schema[key]
            try:
                params[key] = parser(raw)
            except Exception as exc:
                raise ValidationError(f"bad value for {experiment}.{key}: {raw!r}") from exc
    return params


def resolve_config(experiment: str, config_path: str | None = None,
                   seed: int | None = None, out_dir: str | None = None,
                   threads: int | None = None) -> ExperimentConfig:
    """Merge file, CLI flags and environment into one resolved config.

    Precedence: environment (out dir, threads only) > CLI flags > file >
    schema defaults.
    """
    import os

    if experiment not in SCHEMAS:
        raise ValidationError(f"unknown experiment '{experiment}'; choose from {EXPERIMENTS}")
    if config_path is not None:
        params = parse_config(config_path, experiment)
    else:
        params = {name: default for name, (_, default) in SCHEMAS[experiment].items()}
    if seed is not None:
        params["master_seed"] = int(seed)
    out = out_dir if out_dir is not None else "out"
    env_out = os.environ.get("BATCHOT_OUT")
    if env_out:
        out = env_out
    env_threads = os.environ.get("BATCHOT_THREADS")
    if env_threads:
        threads = int(env_threads)
    return ExperimentConfig(experiment=experiment, params=params,
                            out_dir=out, threads=threads)
