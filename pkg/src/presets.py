"""Canned experiment configurations, applied underneath the user's config file."""
from copy import deepcopy
from enum import Enum
from typing import Any

THETA_LOGISTIC_START = (0.5, 1.0, 800.0)
THETA_LOGISTIC_RW = (0.01, 0.01, 100.0)


class Preset(str, Enum):
    FIG2 = "fig2"
    FIG3 = "fig3"
    LGCHECK = "lgcheck"


PRESETS: dict[Preset, dict[str, Any]] = {
    # Full theta-logistic PMMH run; joint proposal of dimension 3 + 100
    Preset.FIG2: {
        "model": {"name": "theta_logistic"},
        "data": {"T": 100},
        "chain": {
            "algorithm": "pmmh",
            "n_iters": 100000,
            "filter": {"n_particles": 200},
            "proposal": {"kind": "adaptive_metropolis", "am_start": 5000, "rw_variances": THETA_LOGISTIC_RW},
            "init_theta": THETA_LOGISTIC_START,
            "path_thin": 10,
        },
    },
    # Started from a constant path far below ln K
    Preset.FIG3: {
        "model": {"name": "theta_logistic"},
        "data": {"T": 100},
        "chain": {
            "algorithm": "pmmh",
            "n_iters": 20000,
            "filter": {"n_particles": 200},
            "proposal": {"kind": "adaptive_metropolis", "am_start": 5000, "rw_variances": THETA_LOGISTIC_RW},
            "init_theta": THETA_LOGISTIC_START,
            "init_path": "constant",
            "init_path_value": 0.0,
            "path_thin": 10,
            "rmse_checkpoints": (10, 20000),
        },
    },
    Preset.LGCHECK: {
        "model": {"name": "linear_gaussian", "linear_gaussian": {"ar_coeff": 0.9}, "free_params": ("ar_coeff",)},
        "data": {"T": 50},
        "chain": {
            "algorithm": "pmmh",
            "n_iters": 50000,
            "filter": {"n_particles": 200},
            "proposal": {"kind": "random_walk", "rw_variances": (0.01,)},
            "init_theta": (0.9,),
            "path_thin": 10,
        },
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    """Recursively merge ``override`` into a copy of ``base``"""
    merged = deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = deepcopy(value)
    return merged


def apply_preset(name: str | Preset | None, raw_config: dict) -> dict:
    """Preset values first, the config file's values on top"""
    if name is None:
        return deepcopy(raw_config)
    return deep_merge(PRESETS[Preset(name)], raw_config)
