"""Shipped run profiles.

``paper-2d`` mirrors the reference setup: 2-D observations, a five-layer
encoder (128-wide, 256-dim output) and six-layer cluster/scorer networks
(128-wide, 512-dim pool), 48 datasets x 8 permutations per batch, ADAM at
1e-4 then 1e-5.  It is a CPU-hours-scale run.

``desk-1d`` is the default: a 1-D model small enough to train on a laptop
in tens of CPU-minutes while still matching the exact conditionals closely.
"""

from __future__ import annotations

import copy

from .errors import ConfigError

PROFILES: dict[str, dict] = {
    "desk-1d": {
        "gen": {
            "alpha": 0.7,
            "sigma_mu": 10.0,
            "sigma_x": 1.0,
            "dim_x": 1,
            "n_min": 5,
            "n_max": 50,
        },
        "model": {
            "enc_dim": 32,
            "pool_dim": 64,
            "encoder_hidden": [48, 48],
            "cluster_hidden": [48, 48],
            "scorer_hidden": [64, 48],
        },
        "train": {
            "iterations": 8000,
            "datasets_per_batch": 32,
            "perms_per_batch": 6,
            "lr_schedule": [[2000, 5e-4], [5000, 2e-4], [None, 1e-4]],
            "diag_every": 25,
            "checkpoint_every": 1000,
            "window": 100,
            "rao_blackwell": False,
            "rb_tail": 3,
            "rb_budget": 2000,
        },
    },
    "paper-2d": {
        "gen": {
            "alpha": 0.7,
            "sigma_mu": 10.0,
            "sigma_x": 1.0,
            "dim_x": 2,
            "n_min": 5,
            "n_max": 100,
        },
        "model": {
            "enc_dim": 256,
            "pool_dim": 512,
            "encoder_hidden": [128, 128, 128, 128],
            "cluster_hidden": [128, 128, 128, 128, 128],
            "scorer_hidden": [128, 128, 128, 128, 128],
        },
        "train": {
            "iterations": 20000,
            "datasets_per_batch": 48,
            "perms_per_batch": 8,
            "lr_schedule": [[1000, 1e-4], [None, 1e-5]],
            "diag_every": 25,
            "checkpoint_every": 1000,
            "window": 100,
            "rao_blackwell": False,
            "rb_tail": 3,
            "rb_budget": 2000,
        },
    },
}


def profile_config(name: str) -> dict:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; available: {sorted(PROFILES)}")
    return copy.deepcopy(PROFILES[name])
