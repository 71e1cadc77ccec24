"""Forward covector process whose conditional mean is the score.

A covector nu rides along each sample path; at any time E[nu_t | x_t] equals
grad log h_t(x_t), the gradient of the log marginal density.  The recursion
mixes a transported term with a fresh noise-kernel term at rate alpha: larger
alpha forgets the (possibly wrong) initialization faster at the price of more
noise-term variance.

Two steppers are provided.  step_nu_continuous is the Euler form used by the
production engine; step_nu_discrete is the exact one-step bookkeeping through
the step map x -> x + F dt + sigma dB, useful at coarse dt and as a
validation route.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conditioning import build_table
from .errors import ConfigError, NumericsError

__all__ = [
    "AlphaSchedule",
    "init_nu",
    "step_nu_continuous",
    "step_nu_discrete",
    "estimate_score",
]


@dataclass(frozen=True)
class AlphaSchedule:
    """Constant mixing rate (1/time); per-step discrete weight is alpha*dt.

    Useful rule of thumb: pick alpha above the fastest contraction rate of
    the drift, so stale covector information decays along the path.
    """

    alpha: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha}")

    def __float__(self) -> float:
        return float(self.alpha)

    def discrete_weight(self, dt: float) -> float:
        w = self.alpha * dt
        if not 0.0 <= w <= 1.0:
            raise ConfigError(f"alpha*dt = {w} outside [0, 1]")
        return w


def init_nu(x0, init) -> np.ndarray:
    """Covector initialization: the score of the initial density at x0."""
    return np.asarray(init.score0(np.asarray(x0, dtype=float)), dtype=float)


def step_nu_continuous(nu, bundle, dB, dt, alpha) -> np.ndarray:
    """One Euler update of the covector at a single (t, x).

    Mirrors the fused block kernels term for term (same evaluation order), so
    a hook-driven reference run reproduces the engine to rounding.
    """
    nu = np.asarray(nu, dtype=float)
    dB = np.asarray(dB, dtype=float)
    alpha = float(alpha)
    gs = bundle.grad_sigma
    nu_db = float(nu @ dB)
    gs_nu = float(gs @ nu)
    jt_nu = bundle.jac_drift.T @ nu
    h_db = bundle.hess_sigma @ dB
    h_gs = bundle.hess_sigma @ gs
    dnu = (
        gs_nu * gs - jt_nu - alpha * nu - bundle.grad_div_drift + h_gs + bundle.lap_sigma * gs
    ) * dt - (nu_db * gs + h_db + (alpha / bundle.sigma) * dB)
    out = nu + dnu
    if not np.isfinite(out).all():
        raise NumericsError("covector update produced non-finite values")
    return out


def step_nu_discrete(
    nu, model, t, x, dB, dt, weight, gamma=None, div_mode="approx", fd_scale=1e-5
) -> np.ndarray:
    """Exact one-step covector update through the discrete step map.

    weight is the dimensionless kernel weight in [0, 1] (alpha*dt for a
    continuous rate alpha).  The transported term solves the transposed
    step-Jacobian system; div g comes either from the closed-form
    approximation ("approx") or from central differences of log|det g| in x
    ("fd").
    """
    from .kernels.discrete import DiscreteOptions, discrete_run_block

    if not 0.0 <= weight <= 1.0:
        raise ConfigError(f"discrete weight must be in [0, 1], got {weight}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    X = x[None, :].copy()
    NU = np.atleast_1d(np.asarray(nu, dtype=float))[None, :].copy()
    ACC = np.zeros((1, 0))
    inc = np.asarray(dB, dtype=float).reshape(1, 1, -1)
    opts = DiscreteOptions(nu_div_g=div_mode, fd_scale=fd_scale)
    work = model if gamma is None else model.with_gamma(gamma)
    alive = discrete_run_block(
        work, work.params.gamma, X, NU, ACC, inc, float(t), float(dt),
        weight / float(dt), [], options=opts,
    )
    if not alive[0]:
        raise NumericsError("discrete covector step failed (singular or non-finite)")
    return NU[0]


def estimate_score(ensemble, cond, min_count=30):
    """Conditional mean of the final covector: a table of score estimates.

    Blown-up paths are excluded.  Histogram bins with fewer than min_count
    samples report NaN statistics.
    """
    x = ensemble.x[ensemble.alive]
    nu = ensemble.nu[ensemble.alive]
    from .conditioning import BinSpec

    if isinstance(cond, BinSpec) and cond.min_count < min_count:
        cond = BinSpec(
            interval=cond.interval,
            n_bins=cond.n_bins,
            min_count=min_count,
            coordinate=cond.coordinate,
        )
    if x.shape[1] == 1:
        return build_table(x[:, 0], nu[:, 0], cond)
    return build_table(x, nu, cond)
