"""Fused per-step ensemble kernels.

Two interchangeable backends advance a block of paths through the continuous
(Euler-level) recursions: a vectorized numpy implementation and an optional
compiled Cython one selected at import time.  Both consume identical
increment arrays and implement the same update order, so they agree to
rounding.  The exact-discrete bookkeeping lives in ``discrete`` and is
numpy-only (it is a validation path built on batched linalg).

Backend choice: DIVKERN_BACKEND=python|cython overrides the default, which
is the compiled stepper when it imported cleanly.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import ConfigError

try:
    from . import cy_backend as _CY
except ImportError:  # extension not built; numpy fallback
    _CY = None

from .py_backend import continuous_step, py_run_block

__all__ = [
    "available_backends",
    "default_backend",
    "resolve_backend",
    "continuous_step",
    "run_block_continuous",
    "compiled_available",
]


def compiled_available() -> bool:
    return _CY is not None


def available_backends():
    return ["python", "cython"] if _CY is not None else ["python"]


def default_backend() -> str:
    env = os.environ.get("DIVKERN_BACKEND", "").strip().lower()
    if env:
        if env not in ("python", "cython"):
            raise ConfigError(f"DIVKERN_BACKEND must be python or cython, got {env!r}")
        if env == "cython" and _CY is None:
            raise ConfigError("DIVKERN_BACKEND=cython but the compiled stepper is unavailable")
        return env
    return "cython" if _CY is not None else "python"


def resolve_backend(backend) -> str:
    if backend in (None, "auto"):
        return default_backend()
    if backend not in ("python", "cython"):
        raise ConfigError(f"unknown backend {backend!r}")
    if backend == "cython" and _CY is None:
        raise ConfigError("compiled stepper requested but unavailable")
    return backend


def run_block_continuous(
    kern, X, NU, ACC, inc, t0, dt, alpha, packs, backend=None, blowup=1e8
) -> np.ndarray:
    """Advance one block in place through inc.shape[1] fused steps.

    X (B, M), NU (B, M), ACC (B, D) are updated in place; returns the alive
    mask (paths that stayed finite and below the blow-up threshold).
    """
    backend = resolve_backend(backend)
    if backend == "cython":
        spec = kern.cy_args()
        if spec is not None:
            fam_id, fpar, fvec = spec
            if packs:
                dirs = np.ascontiguousarray(
                    np.stack([kern.cy_dir_row(p) for p in packs]), dtype=np.float64
                )
            else:
                dirs = np.zeros((0, 1))
            alive = np.ones(X.shape[0], dtype=np.uint8)
            _CY.run_block(
                int(fam_id),
                np.ascontiguousarray(fpar, dtype=np.float64),
                np.ascontiguousarray(fvec, dtype=np.float64),
                dirs,
                X,
                NU,
                ACC,
                inc,
                float(t0),
                float(dt),
                float(alpha),
                alive,
                float(blowup),
            )
            return alive.astype(bool)
        # family has no compiled form (function-defined models)
    return py_run_block(kern, X, NU, ACC, inc, t0, dt, alpha, packs, blowup)
