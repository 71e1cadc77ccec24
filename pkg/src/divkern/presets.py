"""Canned experiment configurations for the repro subcommand.

Each preset is the full key-value config of the underlying subcommand, so
`repro NAME` behaves exactly like running that subcommand with a config file
containing these entries.  Values follow the source experiments; where the
source leaves a knob unstated (ensemble size, alpha for the orbit runs, the
fitting horizon) the choice is recorded here once and shared by tests.
"""

from __future__ import annotations

from .errors import ConfigError

__all__ = ["PRESETS", "get_preset"]

# 1-D multiplicative-noise responses and scores on [-2, 2], 10 bins.
_SEC41 = {
    "subcommand": "linresp",
    "config": {
        "model": "mult1d",
        "gamma": "0",
        "direction": "0",
        "dt": "0.01",
        "t": "0.3",
        "n_paths": "200000",
        "alpha": "10",
        "seed": "41",
        "with_score": "true",
        "bins.interval": "-2, 2",
        "bins.n": "10",
        "bins.min_count": "180",
    },
}

# 40-D cyclic-coupling orbit: ergodic response of the mean square.
_SEC42 = {
    "subcommand": "ergodic",
    "config": {
        "model": "lorenz96",
        "gamma": "0",
        "dim": "40",
        "direction": "0",
        "dt": "0.002",
        "window": "1.5",
        "horizon": "400",
        "n_orbits": "7",
        "alpha": "10",
        "burn_in": "10",
        "observable": "mean_sq",
        "seed": "42",
    },
}

# 1-D two-parameter fit: data at [0, 0], descent from [5, 1].
_SEC51 = {
    "subcommand": "fit",
    "config": {
        "model": "diffproto1d",
        "gamma0": "5, 1",
        "gamma_true": "0, 0",
        "n_data": "200",
        "n_paths": "200",
        "n_neighbors": "5",
        "n_updates": "10",
        "eta": "1",
        "dt": "0.01",
        "t": "1.0",
        "alpha": "10",
        "seed": "51",
    },
}

# 5-D six-parameter fit: data at [5,6,7,8,9,2], descent from zero.
_SEC52 = {
    "subcommand": "fit",
    "config": {
        "model": "diffproto5d",
        "dim": "5",
        "gamma0": "0, 0, 0, 0, 0, 0",
        "gamma_true": "5, 6, 7, 8, 9, 2",
        "n_data": "200",
        "n_paths": "200",
        "n_neighbors": "5",
        "n_updates": "50",
        "eta": "1",
        "dt": "0.01",
        "t": "1.0",
        "alpha": "10",
        "seed": "52",
    },
}

PRESETS = {
    "sec4.1": _SEC41,
    "sec4.2": _SEC42,
    "sec5.1": _SEC51,
    "sec5.2": _SEC52,
}


def get_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r} (available: {', '.join(sorted(PRESETS))})"
        )
    return PRESETS[name]
