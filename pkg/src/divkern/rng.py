"""Reproducible per-path random streams.

Every path of an ensemble owns counter-based Philox streams keyed by
(master seed, path index).  Draws therefore never depend on how paths are
batched into blocks or distributed over workers, which is what makes whole
runs bitwise reproducible.

Stream layout per (seed, path): stream 0 carries the Brownian increments,
stream 1 the initial-condition draw.  Streams live 2^192 counter blocks
apart, so they can never overlap.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

_SEED_MAX = 2**64

INCREMENT_STREAM = 0
INIT_STREAM = 1


def _check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < _SEED_MAX:
        raise ConfigError(f"seed must be a u64, got {seed}")
    return seed


def path_rng(seed, path_index, stream=INCREMENT_STREAM) -> np.random.Generator:
    """Generator for one (seed, path) pair on the given stream."""
    seed = _check_seed(seed)
    key = np.array([seed, int(path_index)], dtype=np.uint64)
    # counter word 0 is the low word; word 3 separates streams by 2^192 blocks
    counter = np.zeros(4, dtype=np.uint64)
    counter[3] = int(stream)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def generate_increments(seed, path_index, n_steps, dim, dt) -> np.ndarray:
    """Brownian increments for one path, shape (n_steps, dim), i.i.d. N(0, dt).

    Pure function of its arguments; the ensemble drivers consume exactly
    these values, so a single path can always be replayed in isolation.
    """
    if n_steps < 0 or dim < 1:
        raise ConfigError(f"bad increment shape ({n_steps}, {dim})")
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    rng = path_rng(seed, path_index, INCREMENT_STREAM)
    return rng.standard_normal((int(n_steps), int(dim))) * np.sqrt(dt)


def initial_rng(seed, path_index) -> np.random.Generator:
    """Generator reserved for the path's initial-condition draw."""
    return path_rng(seed, path_index, INIT_STREAM)
